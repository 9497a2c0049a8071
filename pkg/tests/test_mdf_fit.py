import numpy as np
import pytest

from elsem import numkit
from elsem.constraints import SideInfoSpec
from elsem.el_core import ConstraintMatrix
from elsem.errors import DegenerateConstraints, IllConditioned, MaxIterations
from elsem.mdf_fit import (DiscrepancyKind, discrepancy, discrepancy_gradient, f_gls, f_ml,
                           fit_el, fit_mdf, fit_plain, initial_params)
from elsem.sem_model import (DataMatrix, SemSpec, sample_cov, sem22_params, sem22_spec,
                             structured_sigma)
from elsem.simulation import McConfig, rep_rng, simulate_data, true_params

from conftest import random_spd

ML = DiscrepancyKind("ML")
GLS = DiscrepancyKind("GLS")


def design_truth():
    cfg = McConfig(x_dist={"gamma": [1.0, 3.0], "convention": "rate"})
    return cfg, true_params(cfg)


def test_f_ml_examples(rng):
    S = random_spd(rng, 3)
    assert f_ml(S, S) == pytest.approx(0.0, abs=1e-14)
    assert f_ml(np.diag([2.0, 1.0]), np.eye(2)) == pytest.approx(1 - np.log(2), abs=1e-14)
    with pytest.raises(IllConditioned):
        f_ml(np.eye(2), np.diag([1.0, -1.0]))


def test_f_ml_congruence_invariance(rng):
    for _ in range(20):
        S, Sig = random_spd(rng, 4), random_spd(rng, 4)
        T = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        TS, TSig = T @ S @ T.T, T @ Sig @ T.T
        assert f_ml((TS + TS.T) / 2, (TSig + TSig.T) / 2) == pytest.approx(f_ml(S, Sig),
                                                                          abs=1e-10)


def test_f_gls_examples(rng):
    S, Sig = random_spd(rng, 3), random_spd(rng, 3)
    assert f_gls(S, S, random_spd(rng, 3)) == 0.0
    assert f_gls(S, Sig, np.eye(3)) == pytest.approx(np.sum((S - Sig) ** 2), rel=1e-12)
    assert f_gls(np.diag([2.0, 1.0]), np.eye(2), np.eye(2)) == pytest.approx(1.0)
    with pytest.raises(IllConditioned):
        f_gls(S, Sig, np.diag([1.0, -1.0, 1.0]))


def test_discrepancy_axioms(rng):
    for _ in range(1000):
        p = int(rng.integers(1, 5))
        S, Sig, W = random_spd(rng, p), random_spd(rng, p), random_spd(rng, p)
        vm, vg = f_ml(S, Sig), f_gls(S, Sig, W)
        assert vm >= 0 and vg >= 0
        if vm < 1e-12 or vg < 1e-12:
            assert np.linalg.norm(S - Sig) < 1e-5


def test_discrepancy_gradient_matches_differences(rng):
    S, Sig, W = random_spd(rng, 3), random_spd(rng, 3), random_spd(rng, 3)
    for kind in (ML, DiscrepancyKind("GLS", W)):
        G = discrepancy_gradient(kind, S, Sig)
        for i, j in [(0, 0), (0, 1), (2, 1)]:
            E = np.zeros((3, 3))
            E[i, j] = E[j, i] = 1e-6
            fd = (discrepancy(kind, S, Sig + E) - discrepancy(kind, S, Sig - E)) / 2e-6
            assert fd == pytest.approx(np.sum(G * E) / 1e-6, rel=1e-6, abs=1e-9)


def test_discrepancy_kind_weights(rng):
    S = random_spd(rng, 3)
    assert ML.resolve_weight(S) is None
    np.testing.assert_array_equal(GLS.resolve_weight(S), S)
    np.testing.assert_array_equal(DiscrepancyKind("gls", "identity").resolve_weight(S),
                                  np.eye(3))
    with pytest.raises(ValueError):
        DiscrepancyKind("WLS")
    with pytest.raises(IllConditioned):
        DiscrepancyKind("GLS", np.diag([1.0, -1.0]))


@pytest.mark.parametrize("kind", [ML, GLS, DiscrepancyKind("GLS", "identity")])
def test_noiseless_recovery(kind):
    cfg, truth = design_truth()
    target = structured_sigma(cfg.spec, truth)
    for init in (None, truth.theta * 1.15 + 0.05):
        res = fit_mdf(target, cfg.spec, kind, init=init)
        np.testing.assert_allclose(res.theta_hat.theta, truth.theta, atol=1e-4)
        assert res.discrepancy_value <= 1e-10
        assert res.converged and res.gradient_norm <= 1e-8


def test_least_squares_start_is_exact_for_the_recursive_model():
    cfg, truth = design_truth()
    target = structured_sigma(cfg.spec, truth)
    np.testing.assert_allclose(initial_params(target, cfg.spec), truth.theta, atol=1e-12)


def test_descent_is_monotone_and_not_worse_than_start():
    cfg, truth = design_truth()
    data = simulate_data(cfg, rep_rng(5, 0))
    S = sample_cov(data)
    init = truth.theta * 0.8 + 0.1
    res = fit_mdf(S, cfg.spec, ML, init=init)
    assert np.all(np.diff(res.trace) <= 0)
    assert res.discrepancy_value <= f_ml(S, structured_sigma(cfg.spec, init))


def test_saturated_model_fits_exactly(rng):
    free = [("B", 1, 0, "b")] + [("Gamma", i, j, f"g{i}{j}") for i in range(2)
                                 for j in range(2)]
    spec = SemSpec(d=2, c=2, free=tuple(free))
    assert spec.q == 10
    target = random_spd(rng, 4)
    for kind in (ML, GLS):
        res = fit_mdf(target, spec, kind)
        assert np.max(np.abs(structured_sigma(spec, res.theta_hat) - target)) < 1e-8
        assert res.discrepancy_value < 1e-12


def test_ml_and_gls_are_first_order_equivalent():
    cfg = McConfig(n=400)
    gaps = []
    for rep in range(30):
        data = simulate_data(cfg, rep_rng(21, rep))
        a = fit_plain(data, cfg.spec, ML).theta_hat.theta
        b = fit_plain(data, cfg.spec, GLS).theta_hat.theta
        gaps.append(np.abs(a - b)[:4])
    assert np.mean(gaps) <= 5 / cfg.n


def test_plain_fit_consistent_at_large_n():
    cfg, truth = design_truth()
    cfg = McConfig(n=100_000, x_dist=cfg.x_dist)
    res = fit_plain(simulate_data(cfg, rep_rng(1, 0)), cfg.spec)
    np.testing.assert_allclose(res.theta_hat.theta, truth.theta, atol=0.05)


def test_relabelled_covariates_give_same_discrepancy():
    cfg = McConfig()
    data = simulate_data(cfg, rep_rng(2, 0))
    swapped = DataMatrix(data.Z[:, [0, 1, 3, 2]], 2, 2)
    spec2 = SemSpec(d=2, c=2, free=(("B", 1, 0, "beta"), ("Gamma", 0, 0, "lambda1"),
                                    ("Gamma", 1, 0, "lambda2"), ("Gamma", 1, 1, "lambda3")))
    a = fit_plain(data, cfg.spec)
    b = fit_plain(swapped, spec2)
    assert b.discrepancy_value == pytest.approx(a.discrepancy_value, rel=1e-10, abs=1e-14)
    np.testing.assert_allclose(b.theta_hat.theta[:4], a.theta_hat.theta[:4], atol=1e-8)


def test_packing_order_does_not_matter():
    cfg = McConfig()
    data = simulate_data(cfg, rep_rng(4, 0))
    spec = cfg.spec
    rev = SemSpec(d=2, c=2, free=tuple(reversed(spec.free)), B_fixed=spec.B_fixed)
    init = true_params(cfg).theta * 0.9
    a = fit_mdf(sample_cov(data), spec, ML, init=init).theta_hat
    init_rev = np.concatenate([init[:4][::-1], init[4:]])
    b = fit_mdf(sample_cov(data), rev, ML, init=init_rev).theta_hat
    for name in spec.param_names:
        assert a[name] == pytest.approx(b[name], abs=1e-6)


def test_plain_fit_is_deterministic():
    cfg = McConfig()
    data = simulate_data(cfg, rep_rng(9, 0))
    a, b = fit_plain(data, cfg.spec), fit_plain(data, cfg.spec)
    assert np.array_equal(a.theta_hat.theta, b.theta_hat.theta)
    assert a.discrepancy_value == b.discrepancy_value


def test_iteration_limit_reports_best_fit():
    cfg, truth = design_truth()
    S = sample_cov(simulate_data(cfg, rep_rng(3, 0)))
    with pytest.raises(MaxIterations) as info:
        fit_mdf(S, cfg.spec, ML, init=truth.theta * 1.5, max_iter=1, max_restarts=0)
    assert info.value.result.theta_hat is not None
    assert not info.value.result.converged


def test_el_with_zero_multiplier_reproduces_plain_fit():
    cfg = McConfig()
    data = simulate_data(cfg, rep_rng(6, 0))

    def centred(dat, spec, theta):
        u = dat.X[:, 0] - dat.X[:, 0].mean()
        return ConstraintMatrix(u[:, None])

    plain = fit_plain(data, cfg.spec)
    el = fit_el(data, cfg.spec, side=SideInfoSpec("medians", medians=[0, 0]),
                constraint_builder=centred)
    assert np.linalg.norm(el.el_solution.zeta) < 1e-14
    np.testing.assert_allclose(el.theta_hat.theta, plain.theta_hat.theta, atol=1e-10)
    np.testing.assert_array_equal(el.stage1.theta_hat.theta, plain.theta_hat.theta)


def test_el_rejects_all_zero_constraints():
    cfg = McConfig()
    data = simulate_data(cfg, rep_rng(6, 1))
    with pytest.raises(DegenerateConstraints):
        fit_el(data, cfg.spec, constraint_builder=lambda d, s, t: ConstraintMatrix(
            np.zeros((d.n, 2))))


def test_el_skips_when_zero_is_outside_the_hull():
    cfg = McConfig()
    data = simulate_data(cfg, rep_rng(6, 2))
    res = fit_el(data, cfg.spec, side=SideInfoSpec("medians", medians=[-1.0, np.log(2) * 3]))
    assert res.skipped and res.theta_hat is None
    assert res.stage1 is not None and "NotInHull" in res.skipped_reason


def test_el_with_unrelated_side_information_matches_plain():
    cfg = McConfig(n=300)
    gaps = []
    for rep in range(30):
        data = simulate_data(cfg, rep_rng(31, rep))
        noise = rep_rng(10_000 + rep, 0).standard_normal((cfg.n, 2))
        el = fit_el(data, cfg.spec, constraint_builder=lambda d, s, t: ConstraintMatrix(noise))
        gaps.append(np.abs(el.theta_hat.theta - el.stage1.theta_hat.theta)[:4])
    assert np.mean(gaps) <= 5 / cfg.n


def test_el_fit_pipeline_fields():
    cfg = McConfig(side={"kind": "independence", "m": 2})
    data = simulate_data(cfg, rep_rng(8, 0))
    res = fit_el(data, cfg.spec, side=cfg.side_spec, compute_avar=True)
    assert res.converged and res.el_solution.converged
    assert res.avar.shape == (cfg.spec.q, cfg.spec.q)
    assert np.all(np.diag(res.avar) > 0)
    assert "lambda1" in res.to_text()
    assert res.to_row()["converged"]


def test_gradient_floor_is_negligible_for_well_conditioned_fits():
    cfg = McConfig()
    res = fit_plain(simulate_data(cfg, rep_rng(12, 0)), cfg.spec)
    assert res.gradient_floor < 1e-3 * res.gradient_norm + 1e-10
    assert res.gradient_norm <= 1e-8


def test_gradient_floor_grows_as_errors_vanish():
    floors = []
    for scale in (1.0, 1e-2):
        cfg = McConfig(n=400, eps_dist={"scale": scale}, fix_beta=True)
        floors.append(fit_plain(simulate_data(cfg, rep_rng(13, 0)), cfg.spec).gradient_floor)
    assert floors[1] > 100 * floors[0]
