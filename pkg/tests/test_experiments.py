import json

import numpy as np
import pytest

from mdplab.errors import DegenerateEstimateError, InputError
from mdplab.experiments import (ExperimentConfig, fit_loglog, mean_ci, monotone_decrease,
                                run_lln, run_mdp1, run_mdp2, run_tail, tail_exponent,
                                window_diagnostics)
from mdplab.noise import Control, DeviationScale, JumpCoefficient
from mdplab.reports import report_records, write_report


def make(scalar, **kw):
    model, space, g = scalar
    base = dict(name="t", model=model, g=g, space=space, u0=np.array([1.0]), h=1e-2,
                eps_grid=(2.0 ** -3, 2.0 ** -5), replicas=40, chunk_size=16)
    base.update(kw)
    return ExperimentConfig(**base)


# --------------------------------------------------------------------------
# statistics helpers


def test_mean_ci():
    s = mean_ci([1.0, 2.0, 3.0, 4.0])
    assert s["mean"] == 2.5 and np.isclose(s["var"], 5 / 3)
    assert np.isclose(s["ci_hi"] - s["mean"], 1.959963984540054 * np.sqrt(5 / 12))


def test_fit_loglog_recovers_power_law():
    x = 2.0 ** -np.arange(4, 11)
    slope, se = fit_loglog(x, 3.0 * x ** 1.3)
    assert np.isclose(slope, 1.3) and se < 1e-10


def test_monotone_decrease_allows_ci_overlap():
    row = lambda m, s: {"s": {"mean": m, "ci_lo": m - s, "ci_hi": m + s}}
    ok, bad = monotone_decrease([row(1.0, 0.1), row(1.05, 0.1), row(0.5, 0.1)], "s")
    assert ok and not bad
    ok, bad = monotone_decrease([row(1.0, 0.01), row(2.0, 0.01), row(0.5, 0.01)], "s")
    assert not ok and bad == [1]


def test_tail_exponent():
    s = DeviationScale.power(2.0 ** -10, 0.3)
    assert np.isclose(tail_exponent(np.exp(-32.0), s), 2.0)
    assert tail_exponent(0.0, s) == np.inf


# --------------------------------------------------------------------------
# configuration


def test_config_validation(scalar):
    with pytest.raises(InputError):
        make(scalar, eps_grid=(0.01, 0.1))
    with pytest.raises(InputError):
        make(scalar, eps_grid=(0.9, 0.1))
    with pytest.raises(InputError):
        make(scalar, replicas=0)


def test_window_diagnostics(scalar):
    assert window_diagnostics(make(scalar))


# --------------------------------------------------------------------------
# trivial cases


def test_lln_without_noise_is_exact(scalar):
    model, space, _ = scalar
    rep = run_lln(make(scalar, g=JumpCoefficient.zero(space, 1)))
    assert all(r["total"]["mean"] == 0.0 for r in rep.rows)
    assert rep.passed


def test_mdp1_without_perturbation(scalar):
    conf = make(scalar)
    phi = Control(conf.grid, np.ones((conf.grid.M, 1)) * 0.5)
    rep = run_mdp1(conf, phi, freqs=(1, 4), rho=np.zeros(1))
    assert all(r["e_n"] == 0.0 for r in rep.rows)


def test_mdp1_rejects_phi_outside_ball(scalar):
    conf = make(scalar, m=0.1)
    with pytest.raises(InputError):
        run_mdp1(conf, Control(conf.grid, np.ones((conf.grid.M, 1))))


def test_mdp2_without_noise_or_control(scalar):
    model, space, _ = scalar
    conf = make(scalar, g=JumpCoefficient.zero(space, 1))
    rep = run_mdp2(conf, Control.zeros(conf.grid, 1))
    assert all(r["Z"]["mean"] == 0.0 and r["M"]["mean"] == 0.0 for r in rep.rows)


def test_mdp2_rejects_tilt_outside_bound(scalar):
    conf = make(scalar)
    with pytest.raises(InputError):
        run_mdp2(conf, Control(conf.grid, np.full((conf.grid.M, 1), 100.0)), tilt_bound=2.0)


def test_tail_bulk_event_has_zero_rate(scalar):
    conf = make(scalar, u0=np.zeros(1), target=np.zeros(1), delta=5.0, replicas=50)
    rep = run_tail(conf)
    for r in rep.rows:
        assert r["is"]["mean"] == 1.0 and r["r_is"] == 0.0
    assert rep.summary["I_delta"] == 0.0


def test_tail_without_hits_raises(scalar):
    conf = make(scalar, u0=np.zeros(1), target=np.array([3.0]), delta=1e-6, replicas=5)
    with pytest.raises(DegenerateEstimateError):
        run_tail(conf)


def test_clt_mode_is_flagged(scalar):
    rep = run_lln(make(scalar, scale_mode="clt", replicas=10))
    assert rep.summary["diagnostic_only"]
    assert all("CLT diagnostic" in c.detail for c in rep.criteria)


# --------------------------------------------------------------------------
# reproducibility


def test_reports_identical_across_worker_counts(scalar, monkeypatch):
    monkeypatch.setenv("MDPLAB_WORKERS", "1")
    a = run_lln(make(scalar))
    monkeypatch.setenv("MDPLAB_WORKERS", "4")
    b = run_lln(make(scalar))
    assert json.dumps(report_records(a, "x")) == json.dumps(report_records(b, "x"))


def test_report_files_are_byte_identical(scalar, tmp_path):
    files = []
    for d in ("a", "b"):
        rep = run_lln(make(scalar))
        files.append(write_report(rep, tmp_path / d, "rid"))
    for p, q in zip(*files):
        assert p.read_bytes() == q.read_bytes()
        assert "rid" in p.read_text()


def test_jsonl_layout(scalar, tmp_path):
    rep = run_lln(make(scalar))
    jsonl, csv = write_report(rep, tmp_path, "rid")
    recs = [json.loads(line) for line in jsonl.read_text().splitlines()]
    assert [r["record"] for r in recs] == ["row", "row", "summary"]
    assert [r["epsilon"] for r in recs[:2]] == [2.0 ** -3, 2.0 ** -5]
    lines = csv.read_text().splitlines()
    assert lines[0] == "# run_id=rid" and lines[1].startswith("run_id,epsilon")
