"""Smoke test for the phaseflow Python bindings.

Build and install the extension first, for example:

    pip install maturin
    maturin build --release -m crates/phaseflow-py/Cargo.toml -o dist
    pip install dist/phaseflow_py-*.whl

Then run `python python/smoke_test.py` or `pytest python/smoke_test.py`.
"""

import math
import pathlib
import tempfile

import phaseflow_py as pf

SMALL = ["grid.m_tan=16", "grid.m_nrm=32", "grid.l_nrm=4.0", "grid.t_final=0.003"]


def test_config_and_grid():
    cfg = pf.Config(overrides=SMALL + ["epsilon=1e-3"])
    assert cfg.n_steps == 3
    assert math.isclose(cfg.epsilon, 1e-3)
    assert "epsilon" in cfg.user_keys()
    assert "[grid]" in cfg.to_toml()
    grid = cfg.grid()
    assert (grid.m_tan, grid.m_nrm) == (16, 32)
    zs = grid.normal_coordinates("minus")
    assert len(zs) == 33 and zs[0] == 0.0 and zs[-1] < 0.0
    assert cfg.to_dict()["grid"]["m_nrm"] == 32


def test_bad_configuration_raises():
    try:
        pf.Config(overrides=["grid.m_tan=12"])
    except pf.ConfigError as e:
        assert "m_tan" in str(e)
    else:
        raise AssertionError("expected ConfigError")
    assert issubclass(pf.GateError, pf.PhaseflowError)


def test_material_and_identities():
    m = pf.Material.default(2)
    assert m.equilibrium_residual() <= 1e-12
    assert all(passed for _, passed, _ in m.validate())
    rm, rp, sigma, g_n, g_n1, lap = 2.0, 1.0, 0.3, 0.1, -0.2, 0.7
    tp, tm = pf.traction_split(rm, rp, sigma, g_n, g_n1, lap)
    assert abs((tm - tp) - (sigma * lap + g_n)) < 1e-13
    assert abs((tm / rm - tp / rp) - g_n1) < 1e-13


def test_linear_solvers():
    report = pf.stokes_manufactured([16, 32])
    assert all(e["residual"] < 1e-10 for e in report["errors"])
    assert len(report["orders"]) == 1
    run = pf.heat_two_layer(pf.Grid(m_tan=8, m_nrm=64, l_nrm=8.0), 0.1)
    assert run["relative_error"] < 0.01
    cond, res = pf.resolvent_sweep(pf.Grid(m_tan=8, m_nrm=16, l_nrm=4.0), n_radii=2, n_angles=3)
    assert cond < 1e8 and res < 1e-10


def test_simulate_snapshot_and_plots():
    with tempfile.TemporaryDirectory() as tmp:
        out = pathlib.Path(tmp) / "run"
        result = pf.simulate(pf.Config(overrides=SMALL + ["epsilon=1e-3"]), str(out))
        assert result.completed and result.exit_code == 0
        summary = result.summary
        assert summary["steps_completed"] == 3
        assert summary["max_iterations"] <= 10
        assert all(r < 0.5 for step in result.ratios() for r in step[1:])
        assert len(result.diagnostics()) == 4
        snaps = sorted((out / "snapshots").glob("*.bps"))
        assert snaps
        snap = pf.Snapshot.read(str(snaps[-1]))
        assert snap.shape == (2, 16, 32)
        assert len(snap.h) == 16 and max(abs(v) for v in snap.h) <= 2e-3
        assert len(snap.field("u_plus_1")) == 33
        final = result.final_snapshot()
        assert math.isclose(final.t, 0.003)
        plots = pf.plot(str(out))
        assert any(str(p).endswith("h_evolution.svg") for p in plots)


def test_large_data_terminates_via_gate():
    result = pf.simulate(pf.Config(overrides=SMALL + ["epsilon=0.5"]))
    assert not result.completed
    assert result.exit_code == 2
    assert result.termination["kind"] in ("gate", "contraction")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok {name}")
