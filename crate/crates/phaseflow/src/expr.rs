//! Compiled scalar expressions over a fixed, named variable list.

use std::fmt;
use std::sync::Arc;

use exmex::prelude::*;
use exmex::FlatEx;

use crate::error::{Error, Result};

/// An expression compiled against an ordered list of admissible variables.
#[derive(Clone)]
pub struct CompiledExpr {
    source: String,
    flat: Arc<FlatEx<f64>>,
    /// Position in the caller's variable list of each variable the expression uses.
    slots: Vec<usize>,
    arity: usize,
}

impl fmt::Debug for CompiledExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CompiledExpr({:?})", self.source)
    }
}

impl CompiledExpr {
    pub fn new(source: &str, variables: &[&str]) -> Result<Self> {
        let flat = exmex::parse::<f64>(source)
            .map_err(|e| Error::Config(format!("cannot parse expression {source:?}: {e}")))?;
        let mut slots = Vec::new();
        for name in flat.var_names() {
            match variables.iter().position(|v| v == name) {
                Some(i) => slots.push(i),
                None => {
                    return Err(Error::Config(format!(
                        "expression {source:?} uses unknown variable {name:?}; allowed: {variables:?}"
                    )))
                }
            }
        }
        Ok(Self { source: source.to_string(), flat: Arc::new(flat), slots, arity: variables.len() })
    }

    /// Number of admissible variables the expression was compiled against.
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates with `values[i]` bound to the `i`-th admissible variable.
    /// Evaluation failures yield NaN.
    #[inline]
    pub fn eval(&self, values: &[f64]) -> f64 {
        let mut buf = [0.0f64; 8];
        for (k, &s) in self.slots.iter().enumerate() {
            buf[k] = values[s];
        }
        self.flat.eval(&buf[..self.slots.len()]).unwrap_or(f64::NAN)
    }
}
