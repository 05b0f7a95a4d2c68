"""Calibration tables, market generators, and the replication protocol."""

import dataclasses

import numpy as np
import pytest

import portrisk as pr
from portrisk.simulation import (
    default_workers,
    stationary_mean,
    _draw_error_sds,
    _error_cov_detail,
    _generate_market,
    _hard_threshold_corr,
    _is_pd,
    _MARKET_CACHE,
)


# ------------------------------------------------------------- calibrations

def test_default_calibration_table_values():
    p = pr.default_calibration()
    assert p.mu_B[0] == 0.9833
    assert p.mu_B[1] == -0.1233
    assert p.cov_f[0, 0] == 3.2351
    assert p.cov_f[2, 2] == 0.6586
    assert p.Phi[0, 1] == 0.2803
    assert p.Sigma_B[2, 2] == 0.7624
    assert p.mu_f[2] == -0.0043
    radius = np.max(np.abs(np.linalg.eigvals(p.Phi)))
    assert radius < 1.0
    assert p.sd_min == 0.5 and p.sd_max == 2.0


def test_calibration_arrays_are_read_only():
    p = pr.default_calibration()
    with pytest.raises(ValueError):
        p.cov_f[0, 0] = 99.0


def test_diversified_calibration_is_a_calmer_variant():
    base = pr.default_calibration()
    div = pr.diversified_calibration()
    assert np.allclose(div.Sigma_B, np.asarray(base.Sigma_B) / 16.0)
    assert np.allclose(div.cov_f, np.asarray(base.cov_f) / 4.0)
    assert np.array_equal(div.Phi, base.Phi)
    assert div.sd_min == 0.2 and div.sd_max == 0.6


def test_fingerprint_distinguishes_calibrations():
    a = pr.default_calibration()
    b = pr.diversified_calibration()
    assert a.fingerprint() == pr.default_calibration().fingerprint()
    assert a.fingerprint() != b.fingerprint()
    assert len(a.fingerprint()) == 16


def test_calibration_validation():
    base = pr.default_calibration()
    bad_sym = np.array([[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(pr.DataError, match="symmetric"):
        dataclasses.replace(base, Sigma_B=np.pad(bad_sym, (0, 1)) + np.diag([0, 0, 1.0]))
    with pytest.raises(pr.DataError, match="positive definite"):
        dataclasses.replace(base, cov_f=np.zeros((3, 3)))
    with pytest.raises(pr.DataError, match="spectral radius"):
        dataclasses.replace(base, Phi=np.eye(3) * 1.01)
    with pytest.raises(pr.DataError, match="Gamma"):
        dataclasses.replace(base, gamma_shape=0.0)
    with pytest.raises(pr.DataError, match="sd_min"):
        dataclasses.replace(base, sd_min=0.9, sd_max=0.5)
    with pytest.raises(pr.DataError, match="corr_cap"):
        dataclasses.replace(base, corr_cap=1.0)


# ----------------------------------------------------------------- lyapunov

def test_lyapunov_zero_phi_returns_cov():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    got = pr.solve_lyapunov(np.zeros((2, 2)), cov)
    assert np.array_equal(got, cov)


def test_lyapunov_scalar_case():
    got = pr.solve_lyapunov(np.array([[0.5]]), np.array([[1.0]]))
    assert got[0, 0] == pytest.approx(0.75, abs=1e-15)


def test_lyapunov_residual_identity():
    p = pr.default_calibration()
    sig = pr.solve_lyapunov(p.Phi, p.cov_f)
    resid = p.cov_f - (p.Phi @ p.cov_f @ p.Phi.T + sig)
    assert np.max(np.abs(resid)) <= 1e-12
    assert np.linalg.eigvalsh(sig)[0] > 0
    assert sig[0, 0] == pytest.approx(3.166204541521, rel=1e-9)


def test_lyapunov_rejects_inconsistent_inputs():
    # spectral radius below one does not bound the singular values: this
    # nilpotent Phi would need a negative-definite innovation covariance
    Phi = np.array([[0.0, 1.5], [0.0, 0.0]])
    with pytest.raises(pr.NumericalError):
        pr.solve_lyapunov(Phi, np.eye(2))


def test_stationary_mean():
    p = pr.default_calibration()
    m = stationary_mean(p)
    assert np.max(np.abs((np.eye(3) - p.Phi) @ m - p.mu_f)) <= 1e-14
    zero_phi = dataclasses.replace(p, Phi=np.zeros((3, 3)))
    assert np.allclose(stationary_mean(zero_phi), p.mu_f)


# --------------------------------------------------------------- generators

def test_generate_loadings_moments():
    p = pr.default_calibration()
    rng = pr.derive_rng(171, "loadmc")
    B = pr.generate_loadings(p, 100_000, rng)
    assert B.shape == (100_000, 3)
    se = np.sqrt(np.diag(p.Sigma_B) / 100_000)
    assert np.all(np.abs(B.mean(axis=0) - p.mu_B) <= 4 * se)
    cov = np.cov(B.T, ddof=1)
    rel = np.linalg.norm(cov - p.Sigma_B) / np.linalg.norm(p.Sigma_B)
    assert rel <= 0.05


def test_generate_loadings_degenerate_dispersion():
    p = pr.default_calibration()
    tiny = dataclasses.replace(p, Sigma_B=np.eye(3) * 1e-18)
    B = pr.generate_loadings(tiny, 50, pr.derive_rng(173, "tiny"))
    assert np.max(np.abs(B - p.mu_B)) <= 1e-8
    with pytest.raises(pr.DataError):
        pr.generate_loadings(p, 0, pr.derive_rng(173, "bad"))


def test_error_cov_zero_correlation_is_diagonal():
    p = dataclasses.replace(pr.default_calibration(), corr_mean=0.0, corr_sd=0.0)
    S = pr.generate_error_cov(p, 12, pr.derive_rng(175, "diag"))
    off = ~np.eye(12, dtype=bool)
    assert np.all(S[off] == 0.0)
    assert np.all(np.diag(S) >= p.sd_min ** 2)
    assert np.all(np.diag(S) <= p.sd_max ** 2)


def test_error_cov_positive_definite_at_scale():
    S = pr.generate_error_cov(pr.default_calibration(), 100,
                              np.random.default_rng(55))
    assert np.linalg.eigvalsh(S)[0] > 0


def test_error_cov_threshold_is_minimal():
    # replay the documented draw order (sds first, then correlations) to
    # rebuild the raw correlation matrix, then check the returned
    # threshold restores positive definiteness while half of it does not
    p = pr.default_calibration()
    sigma_u, corr_used, threshold = _error_cov_detail(p, 100, np.random.default_rng(55))
    replay = np.random.default_rng(55)
    _draw_error_sds(p, 100, replay)
    raw = np.eye(100)
    iu = np.triu_indices(100, k=1)
    draws = np.clip(replay.normal(p.corr_mean, p.corr_sd, size=iu[0].size),
                    -p.corr_cap, p.corr_cap)
    raw[iu] = draws
    raw[(iu[1], iu[0])] = draws
    assert not _is_pd(raw)
    assert threshold == pytest.approx(0.8139342579259045, abs=1e-9)
    assert _is_pd(_hard_threshold_corr(raw, threshold))
    assert not _is_pd(_hard_threshold_corr(raw, threshold / 2.0))
    assert np.array_equal(corr_used, _hard_threshold_corr(raw, threshold))
    assert np.linalg.eigvalsh(sigma_u)[0] > 0


def test_var1_factors_shape_and_degenerate_limit():
    p = pr.default_calibration()
    F = pr.generate_var1_factors(p, 7, pr.derive_rng(177, "shape"))
    assert F.shape == (7, 3)
    quiet = dataclasses.replace(p, Phi=np.zeros((3, 3)), cov_f=np.eye(3) * 1e-12)
    Fq = pr.generate_var1_factors(quiet, 50, pr.derive_rng(177, "quiet"))
    assert np.max(np.abs(Fq - quiet.mu_f)) <= 1e-4
    with pytest.raises(pr.DataError):
        pr.generate_var1_factors(p, 0, pr.derive_rng(177, "bad"))


def test_var1_factors_long_run_moments():
    p = pr.default_calibration()
    T = 100_000
    F = pr.generate_var1_factors(p, T, pr.derive_rng(43, "var"))
    cov = np.cov(F.T, ddof=0)
    assert np.linalg.norm(cov - p.cov_f) / np.linalg.norm(p.cov_f) <= 0.02
    # sample mean has long-run covariance (I-Phi)^-1 Sigma_eps (I-Phi)^-T / T
    A = np.linalg.inv(np.eye(3) - p.Phi)
    lrv = A @ pr.solve_lyapunov(p.Phi, p.cov_f) @ A.T
    se = np.sqrt(np.diag(lrv) / T)
    assert np.all(np.abs(F.mean(axis=0) - stationary_mean(p)) <= 4 * se)
    dm = F - F.mean(axis=0)
    lag1 = dm[1:].T @ dm[:-1] / (T - 1)
    want = p.Phi @ p.cov_f
    assert np.linalg.norm(lag1 - want) / np.linalg.norm(p.cov_f) <= 0.02


def test_build_model_instance_assembles_truth():
    p = pr.default_calibration()
    inst = pr.build_model_instance(p, 40, pr.derive_rng(179, "inst"))
    assert inst.N == 40
    assert np.array_equal(inst.Sigma_true, inst.B @ p.cov_f @ inst.B.T + inst.Sigma_u)
    assert np.linalg.eigvalsh(inst.Sigma_true)[0] > 0
    assert not inst.B.flags.writeable
    assert np.array_equal(inst.Sigma_eps, pr.solve_lyapunov(p.Phi, p.cov_f))


def test_build_model_instance_consumption_order():
    p = pr.default_calibration()
    inst = pr.build_model_instance(p, 25, pr.derive_rng(181, "order"))
    replay = pr.derive_rng(181, "order")
    B = pr.generate_loadings(p, 25, replay)
    S_u = pr.generate_error_cov(p, 25, replay)
    assert np.array_equal(inst.B, B)
    assert np.array_equal(inst.Sigma_u, S_u)


# ------------------------------------------------------- replication record

def test_experiment_cell_validation():
    with pytest.raises(pr.DataError):
        pr.ExperimentCell(N=0, T=50, c=1.0)
    with pytest.raises(pr.DataError):
        pr.ExperimentCell(N=10, T=1, c=1.0)
    with pytest.raises(pr.DataError):
        pr.ExperimentCell(N=10, T=50, c=0.9)
    with pytest.raises(pr.DataError, match="unknown estimator"):
        pr.ExperimentCell(N=10, T=50, c=1.0, estimators=("sample", "ridge"))
    with pytest.raises(pr.DataError):
        pr.ExperimentCell(N=10, T=50, c=1.0, estimators=())
    with pytest.raises(pr.DataError):
        pr.ExperimentCell(N=10, T=50, c=1.0, tau=1.0)
    with pytest.raises(pr.DataError):
        pr.ExperimentCell(N=10, T=50, c=1.0, portfolios_per_rep=0)


def test_run_replication_deterministic():
    cell = pr.ExperimentCell(N=12, T=40, c=1.5, portfolios_per_rep=6)
    a = pr.run_replication(cell, 99, 3)
    b = pr.run_replication(cell, 99, 3)
    assert np.array_equal(a.true_variance, b.true_variance)
    for name in cell.estimators:
        for field, arr in a.per_estimator[name].items():
            other = b.per_estimator[name][field]
            if arr.dtype.kind == "f":
                assert np.array_equal(arr, other, equal_nan=True), (name, field)
            else:
                assert np.array_equal(arr, other), (name, field)


def test_run_replication_record_shapes_and_formulas():
    cell = pr.ExperimentCell(N=15, T=50, c=1.6, portfolios_per_rep=8,
                             estimators=("sample", "poet"))
    rec = pr.run_replication(cell, 31, 0)
    assert rec.true_variance.shape == (8,)
    assert set(rec.per_estimator) == {"sample", "poet"}
    params = pr.default_calibration()
    instance, panel, _ = _generate_market(params, 15, 50, 31, 0)
    est = pr.sample_covariance(panel)
    d = rec.per_estimator["sample"]
    max_err = np.max(np.abs(est.matrix - instance.Sigma_true))
    rng_pf = pr.derive_rng(31, "portfolios", 15, 50, 1.6, 0)
    for j in range(8):
        w = pr.sample_random_portfolio(15, 1.6, rng_pf)
        gross_sq = np.abs(w.weights).sum() ** 2
        assert d["xi"][j] == pytest.approx(gross_sq * max_err, rel=1e-12)
        vhat = pr.portfolio_variance(est, w)
        assert d["variance_hat"][j] == pytest.approx(vhat, rel=1e-12)
        truev = float(w.weights @ instance.Sigma_true @ w.weights)
        assert rec.true_variance[j] == pytest.approx(truev, rel=1e-12)
        # the derived columns are exact functions of the stored ones
        assert d["delta"][j] == abs(d["variance_hat"][j] - rec.true_variance[j])
        assert d["re2"][j] == d["u_variance"][j] / (4.0 * rec.true_variance[j])
        if d["u_variance"][j] > 0:
            assert d["re1"][j] == d["xi"][j] / d["u_variance"][j]
        assert d["covered"][j] == (d["delta"][j] <= d["u_variance"][j])


def test_run_replication_decomposition_identity():
    # squared portfolio returns split exactly into systematic, cross, and
    # idiosyncratic terms when the market's own factor draw is used
    params = pr.default_calibration()
    instance, panel, fpanel = _generate_market(params, 10, 20, 7, 0)
    rng = pr.derive_rng(7, "decompw")
    w = pr.sample_random_portfolio(10, 1.5, rng).weights
    a = panel.values @ w
    s = fpanel.values @ (instance.B.T @ w)
    e = a - s
    lhs = a ** 2
    rhs = s ** 2 + 2 * s * e + e ** 2
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(lhs)


def test_run_replication_is_fast_at_benchmark_size():
    import time
    cell = pr.ExperimentCell(N=20, T=300, c=1.0)
    start = time.monotonic()
    pr.run_replication(cell, 5, 0)
    assert time.monotonic() - start < 5.0


def test_market_cache_hit_equals_miss():
    params = pr.default_calibration()
    key_args = (params, 9, 25, 401, 2)
    first = _generate_market(*key_args)
    again = _generate_market(*key_args)
    assert again is first  # served from the cache
    _MARKET_CACHE.clear()
    rebuilt = _generate_market(*key_args)
    assert rebuilt is not first
    assert np.array_equal(rebuilt[1].values, first[1].values)
    assert np.array_equal(rebuilt[0].Sigma_true, first[0].Sigma_true)


def test_cells_differing_only_in_exposure_share_markets():
    a = pr.run_replication(pr.ExperimentCell(N=8, T=30, c=1.0,
                                             portfolios_per_rep=4), 17, 1)
    b = pr.run_replication(pr.ExperimentCell(N=8, T=30, c=2.0,
                                             portfolios_per_rep=4), 17, 1)
    # different portfolios, but the same market underneath: the sup error
    # recovered from xi / gross^2 must agree across the two cells
    assert not np.array_equal(a.true_variance, b.true_variance)
    ga = a.per_estimator["sample"]["xi"][0] / 1.0  # c=1: gross^2 = 1
    gb = b.per_estimator["sample"]["xi"][0] / 4.0  # c=2: gross^2 = 4
    assert ga == pytest.approx(gb, rel=1e-12)


# ---------------------------------------------------------------- experiment

def test_run_experiment_worker_count_invariance():
    grid = [pr.ExperimentCell(N=6, T=24, c=1.0, portfolios_per_rep=5,
                              estimators=("sample",)),
            pr.ExperimentCell(N=6, T=24, c=1.5, portfolios_per_rep=5,
                              estimators=("sample",))]
    one = pr.run_experiment(grid, 6, workers=1, base_seed=11)
    two = pr.run_experiment(grid, 6, workers=2, base_seed=11)
    assert one.cells == two.cells
    assert one.replications == 6 and one.base_seed == 11


def test_run_experiment_aggregates_recompute():
    cell = pr.ExperimentCell(N=7, T=30, c=1.2, portfolios_per_rep=6,
                             estimators=("sample",))
    report = pr.run_experiment([cell], 5, workers=1, base_seed=13)
    agg = report.cells[0]
    records = [pr.run_replication(cell, 13, rep) for rep in range(5)]
    delta = np.concatenate([r.per_estimator["sample"]["delta"] for r in records])
    u = np.concatenate([r.per_estimator["sample"]["u_variance"] for r in records])
    risk = np.sqrt(np.concatenate([r.true_variance for r in records]))
    assert agg.mean_delta == pytest.approx(float(delta.mean()), rel=1e-15)
    assert agg.mean_u == pytest.approx(float(u.mean()), rel=1e-15)
    assert agg.mean_true_risk == pytest.approx(float(risk.mean()), rel=1e-15)
    assert agg.coverage == pytest.approx(float((delta <= u).mean()), abs=1e-15)
    assert agg.n_records == 30
    assert agg.estimator == "sample" and agg.N == 7


def test_run_experiment_validation():
    with pytest.raises(pr.DataError):
        pr.run_experiment([], 5, workers=1)
    cell = pr.ExperimentCell(N=5, T=20, c=1.0)
    with pytest.raises(pr.DataError):
        pr.run_experiment([cell], 0, workers=1)
    with pytest.raises(pr.DataError):
        pr.run_experiment([cell], 5, workers=-2)


def test_by_estimator_filter():
    cell = pr.ExperimentCell(N=6, T=20, c=1.0, portfolios_per_rep=3,
                             estimators=("sample", "poet"), poet_K=2)
    report = pr.run_experiment([cell], 2, workers=1, base_seed=3)
    names = [a.estimator for a in report.cells]
    assert names == ["sample", "poet"]
    assert [a.estimator for a in report.by_estimator("poet")] == ["poet"]


# -------------------------------------------------------------- grid config

FULL_CONFIG = """
# experiment layout
Ns = 10, 20
Ts = 30
cs = 1.0, 1.6
estimators = sample, poet
L = 4
tau = 0.05
portfolios_per_rep = 7
replications = 9
base_seed = 5
paper_z = yes
poet_K = 2
poet_C = 0.4
poet_rule = soft
periods_per_year = 252
"""


def test_parse_grid_config_full_file():
    cfg = pr.parse_grid_config(FULL_CONFIG)
    assert cfg.replications == 9
    assert cfg.base_seed == 5
    assert cfg.periods_per_year == 252.0
    assert len(cfg.cells) == 4
    # N-major, then T, then c
    assert [(c.N, c.c) for c in cfg.cells] == [(10, 1.0), (10, 1.6),
                                               (20, 1.0), (20, 1.6)]
    cell = cfg.cells[0]
    assert cell.estimators == ("sample", "poet")
    assert cell.L == 4 and cell.portfolios_per_rep == 7
    assert cell.poet_K == 2 and cell.poet_C == 0.4
    assert cell.paper_z is True


def test_parse_grid_config_defaults():
    cfg = pr.parse_grid_config("Ns = 5\nTs = 20\ncs = 1\n")
    cell = cfg.cells[0]
    assert cell.L == 5 and cell.tau == 0.05
    assert cell.portfolios_per_rep == 200
    assert cell.estimators == ("sample", "factor", "poet")
    assert cfg.replications == 100 and cfg.base_seed == 0
    assert cfg.periods_per_year == 252.0


def test_parse_grid_config_errors_name_the_key_and_line():
    with pytest.raises(pr.DataError, match=r"line 2: unknown key 'frobs'"):
        pr.parse_grid_config("Ns = 5\nfrobs = 3\n")
    with pytest.raises(pr.DataError, match=r"line 3: key 'Ns' appears twice"):
        pr.parse_grid_config("Ns = 5\nTs = 20\nNs = 6\n")
    with pytest.raises(pr.DataError, match="missing required key 'cs'"):
        pr.parse_grid_config("Ns = 5\nTs = 20\n")
    with pytest.raises(pr.DataError, match="expected 'key = value'"):
        pr.parse_grid_config("Ns = 5\njust words\nTs = 2\ncs = 1\n")
    with pytest.raises(pr.DataError, match="cannot parse"):
        pr.parse_grid_config("Ns = 5, x\nTs = 20\ncs = 1\n")
    with pytest.raises(pr.DataError, match="boolean"):
        pr.parse_grid_config("Ns = 5\nTs = 20\ncs = 1\npaper_z = maybe\n")
    with pytest.raises(pr.DataError, match="unknown estimator"):
        pr.parse_grid_config("Ns = 5\nTs = 20\ncs = 1\nestimators = ledoit\n")
    with pytest.raises(pr.DataError, match="empty list"):
        pr.parse_grid_config("Ns =\nTs = 20\ncs = 1\n")


def test_default_workers_env_override(monkeypatch):
    monkeypatch.setenv("PRL_THREADS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("PRL_THREADS", "abc")
    with pytest.raises(pr.DataError, match="PRL_THREADS"):
        default_workers()
    monkeypatch.setenv("PRL_THREADS", "0")
    with pytest.raises(pr.DataError):
        default_workers()
    monkeypatch.delenv("PRL_THREADS")
    assert 1 <= default_workers() <= 8
