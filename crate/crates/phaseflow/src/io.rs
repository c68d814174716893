//! Snapshot files and small text artifacts.
//!
//! Binary snapshot layout (`BPS1`, all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "BPS1"
//! dim        u32
//! m_tan      u32
//! m_nrm      u32
//! l_tan      f64
//! l_nrm      f64
//! t          f64
//! n_fields   u32
//! n_fields times:
//!   name_len u8, name (UTF-8), kind u8 (0 upper strip, 1 lower strip, 2 interface line),
//!   len u64, len x f64
//! checksum   u64      FNV-1a over every preceding byte
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::constitutive::Side;
use crate::error::{Error, Result};
use crate::grid::{Grid, LineField, StripField};
use crate::state::State;

const MAGIC: &[u8; 4] = b"BPS1";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// One committed time level as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub m_tan: usize,
    pub m_nrm: usize,
    pub l_tan: f64,
    pub l_nrm: f64,
    pub state: State,
    /// Transported density on the lower strip (the extension below the interface).
    pub rho_minus: Option<StripField>,
    /// Interface velocity `d_t h` used for the geometry of this level.
    pub dhdt: Option<LineField>,
}

enum Payload<'a> {
    Strip(&'a StripField),
    Line(&'a LineField),
}

impl Snapshot {
    pub fn new(grid: &Grid, state: &State, rho_minus: Option<&StripField>, dhdt: Option<&LineField>) -> Self {
        Self {
            dim: grid.dim,
            m_tan: grid.m_tan,
            m_nrm: grid.m_nrm,
            l_tan: grid.l_tan,
            l_nrm: grid.l_nrm,
            state: state.clone(),
            rho_minus: rho_minus.cloned(),
            dhdt: dhdt.cloned(),
        }
    }

    /// Checks that the snapshot was written on `grid`.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        let same = self.dim == grid.dim
            && self.m_tan == grid.m_tan
            && self.m_nrm == grid.m_nrm
            && self.l_tan == grid.l_tan
            && self.l_nrm == grid.l_nrm;
        if same {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "snapshot grid (dim {}, {}x{}, L {} x {}) differs from the run grid",
                self.dim, self.m_tan, self.m_nrm, self.l_tan, self.l_nrm
            )))
        }
    }

    fn fields(&self) -> Vec<(String, Payload<'_>)> {
        let s = &self.state;
        let mut out = vec![("rho_plus".to_string(), Payload::Strip(&s.rho_plus))];
        for (i, c) in s.u_plus.iter().enumerate() {
            out.push((format!("u_plus_{}", i + 1), Payload::Strip(c)));
        }
        for (i, c) in s.u_minus.iter().enumerate() {
            out.push((format!("u_minus_{}", i + 1), Payload::Strip(c)));
        }
        out.push(("theta_plus".into(), Payload::Strip(&s.theta_plus)));
        out.push(("theta_minus".into(), Payload::Strip(&s.theta_minus)));
        out.push(("pi_minus".into(), Payload::Strip(&s.pi_minus)));
        out.push(("h".into(), Payload::Line(&s.h)));
        if let Some(r) = &self.rho_minus {
            out.push(("rho_minus".into(), Payload::Strip(r)));
        }
        if let Some(d) = &self.dhdt {
            out.push(("dhdt".into(), Payload::Line(d)));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        for v in [self.dim, self.m_tan, self.m_nrm] {
            b.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [self.l_tan, self.l_nrm, self.state.t] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        let fields = self.fields();
        b.extend_from_slice(&(fields.len() as u32).to_le_bytes());
        for (name, payload) in &fields {
            b.push(name.len() as u8);
            b.extend_from_slice(name.as_bytes());
            let (kind, data) = match payload {
                Payload::Strip(f) => (if f.side == Side::Plus { 0u8 } else { 1u8 }, &f.data),
                Payload::Line(l) => (2u8, &l.data),
            };
            b.push(kind);
            b.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data.iter() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a(&b);
        b.extend_from_slice(&sum.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("BPS1 snapshot: {m}"));
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if stored != fnv1a(body) {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { body, pos: 4 };
        let (dim, m_tan, m_nrm) = (r.u32()?, r.u32()?, r.u32()?);
        let head = r.f64s(3)?;
        let n_fields = r.u32()?;
        let mut strips: std::collections::BTreeMap<String, StripField> = Default::default();
        let mut lines: std::collections::BTreeMap<String, LineField> = Default::default();
        for _ in 0..n_fields {
            let name_len = r.take(1)?[0] as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("field name is not UTF-8"))?.to_string();
            let kind = r.take(1)?[0];
            let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
            if len > body.len() / 8 {
                return Err(bad("field length exceeds file size"));
            }
            let data = r.f64s(len)?;
            match kind {
                0 => {
                    strips.insert(name, StripField { side: Side::Plus, data });
                }
                1 => {
                    strips.insert(name, StripField { side: Side::Minus, data });
                }
                2 => {
                    lines.insert(name, LineField { data });
                }
                _ => return Err(bad("unknown field kind")),
            }
        }
        let pos = r.pos;
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        let mut strip = |name: &str| strips.remove(name).ok_or_else(|| bad(&format!("missing field {name}")));
        let state = State {
            rho_plus: strip("rho_plus")?,
            u_plus: (1..=dim).map(|i| strip(&format!("u_plus_{i}"))).collect::<Result<_>>()?,
            u_minus: (1..=dim).map(|i| strip(&format!("u_minus_{i}"))).collect::<Result<_>>()?,
            theta_plus: strip("theta_plus")?,
            theta_minus: strip("theta_minus")?,
            pi_minus: strip("pi_minus")?,
            h: lines.remove("h").ok_or_else(|| bad("missing field h"))?,
            t: head[2],
        };
        Ok(Self {
            dim,
            m_tan,
            m_nrm,
            l_tan: head[0],
            l_nrm: head[1],
            state,
            rho_minus: strips.remove("rho_minus"),
            dhdt: lines.remove("dhdt"),
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Writes `<stem>_strips.csv` (one row per node of both strips) and
    /// `<stem>_interface.csv` (one row per interface point).
    pub fn write_csv(&self, grid: &Grid, dir: &Path, stem: &str) -> Result<()> {
        let s = &self.state;
        let n = grid.dim;
        let mut out = String::from("side,j,i,x1");
        if n == 3 {
            out.push_str(",x2");
        }
        out.push_str(",x_n,rho,");
        let comps: Vec<String> = (1..=n).map(|i| format!("u_{i}")).collect();
        out.push_str(&comps.join(","));
        out.push_str(",theta,pi\n");
        for side in [Side::Minus, Side::Plus] {
            for j in 0..grid.n_rows {
                for i in 0..grid.n_tan {
                    let p = j * grid.n_tan + i;
                    let x = grid.tan_coords(i);
                    let rho = match side {
                        Side::Plus => s.rho_plus.data[p],
                        Side::Minus => self.rho_minus.as_ref().map_or(f64::NAN, |r| r.data[p]),
                    };
                    let _ = write!(out, "{},{j},{i},{:.17e}", side.label(), x[0]);
                    if n == 3 {
                        let _ = write!(out, ",{:.17e}", x[1]);
                    }
                    let _ = write!(out, ",{:.17e},{rho:.17e}", grid.x_nrm(side, j));
                    for c in s.u(side) {
                        let _ = write!(out, ",{:.17e}", c.data[p]);
                    }
                    let pi = if side == Side::Minus { s.pi_minus.data[p] } else { f64::NAN };
                    let _ = writeln!(out, ",{:.17e},{pi:.17e}", s.theta(side).data[p]);
                }
            }
        }
        std::fs::write(dir.join(format!("{stem}_strips.csv")), out)?;
        let mut line = String::from("i,x1");
        if n == 3 {
            line.push_str(",x2");
        }
        line.push_str(",h,dhdt\n");
        for i in 0..grid.n_tan {
            let x = grid.tan_coords(i);
            let _ = write!(line, "{i},{:.17e}", x[0]);
            if n == 3 {
                let _ = write!(line, ",{:.17e}", x[1]);
            }
            let d = self.dhdt.as_ref().map_or(f64::NAN, |d| d.data[i]);
            let _ = writeln!(line, ",{:.17e},{d:.17e}", s.h.data[i]);
        }
        std::fs::write(dir.join(format!("{stem}_interface.csv")), line)?;
        Ok(())
    }
}

struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .body
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("BPS1 snapshot: truncated".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(8 * n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

/// Writes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a numeric CSV with a header row into column vectors.
pub fn read_csv_columns(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut cols = vec![Vec::new(); header.len()];
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<&str> = line.split(',').collect();
        if vals.len() != header.len() {
            return Err(Error::Format(format!("{} row {}: expected {} columns", path.display(), k + 2, header.len())));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v.trim().parse::<f64>().unwrap_or(f64::NAN));
        }
    }
    Ok((header, cols))
}
