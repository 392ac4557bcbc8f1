"""Surrogate-loss constructions against closed forms and grid oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arks.errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    NumericalError,
    PossiblyUnboundedError,
)
from arks.kernels import CostSpec, KernelSpec, gaussian, gram
from arks.models import Fn
from arks.selfcheck import check_majorant, check_sandwich, check_sigma_limits
from arks.surrogates import (
    InnerSolverConfig,
    brute_force_k_transform,
    c_transform,
    empirical_smoothed_sup,
    grid_1d,
    idro_regularizer,
    k_transform,
    k_transform_log,
    kernel_distance_envelope,
    pasch_hausdorff,
    sigma_star,
    worst_case_sup,
)


def quad(a=1.0, c=0.0, d=1.0):
    """d + a (u - c)^2 with an exact gradient and batch evaluation."""
    return Fn(
        lambda u: d + a * float((u[0] - c) ** 2),
        lambda u: np.array([2.0 * a * (u[0] - c)]),
        value_batch=lambda U: d + a * (U[:, 0] - c) ** 2,
    )


def constant(value):
    return Fn(lambda u: value, lambda u: np.zeros_like(np.atleast_1d(u)),
              value_batch=lambda U: np.full(U.shape[0], value))


CFG = InnerSolverConfig(alpha=0.2, steps=80, restarts=4, seed=1, tol=0.0)


# -- k-transform ----------------------------------------------------------


def test_k_transform_constant_loss():
    for sigma in (0.1, 1.0, 100.0):
        res = k_transform(constant(3.0), [0.7], gaussian(sigma), CFG)
        assert res.value == pytest.approx(3.0, rel=1e-12)
        assert res.u_star[0] == pytest.approx(0.7)


def test_k_transform_quadratic_against_grid_oracle():
    # independent oracle: dense grid search over [-5, 5], step 1e-4
    us = np.arange(-5.0, 5.0 + 1e-4, 1e-4)
    oracle = float(((1 + us * us) * np.exp(-0.5 * us * us)).max())
    res = k_transform(quad(), [0.0], gaussian(1.0), CFG)
    assert res.value == pytest.approx(oracle, abs=1e-6)
    assert res.value == pytest.approx(2.0 * math.exp(-0.5), rel=1e-8)
    assert abs(abs(res.u_star[0]) - 1.0) < 1e-4


def test_k_transform_small_sigma_recovers_loss():
    res = k_transform(quad(), [0.0], gaussian(1e-6),
                      InnerSolverConfig(alpha=1e-7, steps=15, seed=0))
    assert res.value == pytest.approx(1.0, abs=1e-3)
    us = np.arange(-5.0, 5.0 + 1e-4, 1e-4)
    oracle = float(((1 + us * us) * np.exp(-0.5 * us * us / 1e-6)).max())
    assert res.value == pytest.approx(oracle, abs=1e-3)


def test_k_transform_majorant_anchor_even_when_stuck():
    # x = c is a stationary point of the inner objective; the anchor keeps
    # the majorant property regardless
    res = k_transform(quad(), [0.0], gaussian(1.0),
                      InnerSolverConfig(alpha=0.2, steps=15, seed=0))
    assert res.value >= quad().value(np.array([0.0])) - 1e-12


def test_k_transform_trace_and_convergence():
    res = k_transform(quad(), [0.5], gaussian(1.0), CFG)
    assert res.trace[-1] >= res.trace[0]
    assert res.value >= max(res.trace) - 1e-15
    res2 = k_transform(quad(), [0.5], gaussian(1.0),
                       InnerSolverConfig(alpha=0.2, steps=500, seed=0))
    assert res2.converged


def test_k_transform_log_equivalence():
    kspec = gaussian(0.5)
    cfg = InnerSolverConfig(alpha=0.03, steps=800, seed=0, tol=0.0)
    direct = k_transform(quad(0.8, 0.4, 1.2), [1.1], kspec,
                         InnerSolverConfig(alpha=0.03, steps=800, seed=0, tol=0.0,
                                           log_scale=False))
    logged = k_transform_log(quad(0.8, 0.4, 1.2), [1.1], kspec, cfg)
    assert logged.value == pytest.approx(direct.value, rel=1e-8)


def test_k_transform_log_constant():
    res = k_transform_log(constant(3.0), [0.0], gaussian(1.0), CFG)
    assert res.value == pytest.approx(3.0, rel=1e-12)


def test_k_transform_log_requires_positive_loss():
    neg = Fn(lambda u: -1.0, lambda u: np.zeros(1))
    with pytest.raises(DomainError, match="positive"):
        k_transform_log(neg, [0.0], gaussian(1.0), CFG)
    # auto mode falls back to the direct product instead
    res = k_transform(constant(0.0), [0.0], gaussian(1.0), CFG)
    assert res.value == 0.0


def test_log_objective_concave_for_log_concave_loss():
    # loss exp(-u^2): log objective -u^2 - (u-x)^2/sigma is concave for any
    # sigma below 1/L; sample second differences along a line
    sigma, x = 0.3, 0.4
    us = np.linspace(-2, 2, 401)
    g = -us * us - (us - x) ** 2 / sigma
    assert np.all(np.diff(g, 2) <= 1e-9)


def test_k_transform_nonfinite_objective_fails_with_step():
    spiky = Fn(lambda u: math.inf if abs(u[0]) > 0.5 else 1.0,
               lambda u: np.ones(1))
    with pytest.raises(NumericalError, match="step"):
        k_transform(spiky, [0.4], gaussian(1.0),
                    InnerSolverConfig(alpha=1.0, steps=5, log_scale=False))


def test_k_transform_monotone_in_sigma():
    vals = [k_transform(quad(), [0.3], gaussian(s), CFG).value
            for s in (0.01, 0.1, 1.0, 10.0)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


# -- c-transform (Moreau envelope) ----------------------------------------


def test_c_transform_closed_form():
    # l(u) = u^2, cost sq-l2, y = 2, x = 1: value x^2 y/(y-1) = 2 at u* = 2
    cfg = InnerSolverConfig(alpha=0.25, steps=200, tol=0.0)
    res = c_transform(quad(1.0, 0.0, 0.0), [1.0], 2.0, CostSpec("sq-l2"), cfg)
    assert res.value == pytest.approx(2.0, abs=1e-6)
    assert res.u_star[0] == pytest.approx(2.0, abs=1e-4)


def test_c_transform_divergence_detected():
    cfg = InnerSolverConfig(alpha=0.25, steps=15)
    with pytest.raises(DivergenceError, match="ceiling"):
        c_transform(quad(1.0, 0.0, 0.0), [1.0], 1.0, CostSpec("sq-l2"), cfg)


def test_c_transform_large_y_pins_to_loss():
    cfg = InnerSolverConfig(alpha=0.25, steps=60)
    fn = quad(1.0, 0.3, 0.5)
    res = c_transform(fn, [1.2], 1e6, CostSpec("sq-l2"), cfg)
    assert res.value == pytest.approx(fn.value(np.array([1.2])), abs=1e-5)


def test_c_transform_needs_positive_y():
    with pytest.raises(ConfigError):
        c_transform(quad(), [0.0], 0.0, CostSpec("sq-l2"), CFG)


# -- kernel distance envelope ----------------------------------------------


def test_kde_y_to_zero_approaches_box_sup():
    box_cfg = InnerSolverConfig(alpha=0.3, steps=200, restarts=6,
                                restart_radius=1.5, box=(-2.0, 2.0), seed=2)
    res = kernel_distance_envelope(quad(), [0.0], 1e-9, gaussian(1.0), box_cfg)
    assert res.value == pytest.approx(5.0, abs=1e-5)  # sup of 1 + u^2 on [-2, 2]


def test_kde_majorant_at_anchor():
    res = kernel_distance_envelope(quad(), [1.3], 10.0, gaussian(1.0),
                                   InnerSolverConfig(alpha=0.05, steps=15, box=(-2.0, 2.0)))
    assert res.value >= quad().value(np.array([1.3])) - 1e-12


def test_kde_against_grid_oracle():
    kspec = gaussian(1.0)
    y = 10.0
    us = grid_1d(-2.0, 2.0, 1e-4)
    cfg = InnerSolverConfig(alpha=0.02, steps=400, restarts=8, restart_radius=1.0,
                            box=(-2.0, 2.0), seed=3, tol=0.0)
    for x in (-1.0, 0.0, 1.0):
        ls = 1 + us * us
        oracle = float((ls - 0.5 * y * (2 - 2 * np.exp(-0.5 * (us - x) ** 2))).max())
        res = kernel_distance_envelope(quad(), [x], y, kspec, cfg)
        assert res.value == pytest.approx(oracle, abs=1e-4)


# -- Pasch-Hausdorff envelope ----------------------------------------------


def test_pasch_hausdorff_lipschitz_loss_unchanged():
    us = grid_1d(-5.0, 5.0, 1e-3)
    ls = np.abs(us)
    for x in (-2.0, 0.0, 1.5):
        xi = us[np.argmin(np.abs(us - x))]
        assert pasch_hausdorff(us, ls, float(xi), 1.0) == pytest.approx(abs(xi), abs=1e-12)


def test_pasch_hausdorff_below_lipschitz_reports_unbounded():
    us = grid_1d(-5.0, 5.0, 1e-3)
    with pytest.raises(PossiblyUnboundedError):
        pasch_hausdorff(us, np.abs(us), 0.0, 0.5)


def test_pasch_hausdorff_constant_loss():
    us = grid_1d(-5.0, 5.0, 0.01)
    assert pasch_hausdorff(us, np.full_like(us, 2.5), 0.3, 1.0) == pytest.approx(2.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.6, 4.0))
def test_pasch_hausdorff_output_is_lipschitz(x1, x2, y):
    us = grid_1d(-6.0, 6.0, 1e-3)
    ls = np.sin(2 * us) + 0.5 * us * us  # slope bounded by 2 + 6 = 8 on the grid
    if y * 1.0 < 8.0:
        y = y + 8.0
    f1 = pasch_hausdorff(us, ls, x1, y)
    f2 = pasch_hausdorff(us, ls, x2, y)
    assert abs(f1 - f2) <= y * abs(x1 - x2) + 1e-9


# -- worst-case supremum ----------------------------------------------------


def test_worst_case_quadratic_box():
    res = worst_case_sup(quad(1.0, 0.0, 0.0), (-2.0, 2.0),
                         InnerSolverConfig(alpha=0.1, grid_step=1e-4))
    assert res.value == pytest.approx(4.0, rel=1e-9)
    assert abs(res.u_star[0]) == pytest.approx(2.0)


def test_worst_case_constant():
    res = worst_case_sup(constant(1.5), (-1.0, 1.0), InnerSolverConfig(alpha=0.1))
    assert res.value == pytest.approx(1.5)


def test_worst_case_2d_bowl_at_corner():
    center = np.array([0.3, -0.2])

    def bowl_value(u):
        return float((u - center) @ (u - center))

    fn = Fn(bowl_value, lambda u: 2.0 * (u - center),
            value_batch=lambda U: ((U - center) ** 2).sum(axis=1))
    box = [(-1.0, 2.0), (-1.5, 1.0)]
    res = worst_case_sup(fn, box, InnerSolverConfig(alpha=0.1, grid_step=0.05))
    corners = [np.array([a, b]) for a in (-1.0, 2.0) for b in (-1.5, 1.0)]
    assert res.value == pytest.approx(max(bowl_value(c) for c in corners), rel=1e-12)


def test_worst_case_explicit_grid():
    pts = np.array([-1.0, 0.0, 3.0])
    res = worst_case_sup(quad(1.0, 0.0, 0.0), pts, InnerSolverConfig(alpha=0.1))
    assert res.value == pytest.approx(9.0)
    assert res.u_star[0] == pytest.approx(3.0)


def test_worst_case_unbounded_domain_rejected():
    with pytest.raises(ConfigError, match="bounded"):
        worst_case_sup(quad(), (-math.inf, math.inf), InnerSolverConfig(alpha=0.1))


def test_worst_case_high_dim_ascent():
    center = np.zeros(3)
    fn = Fn(lambda u: float(u @ u), lambda u: 2.0 * u)
    box = [(-1.0, 1.0)] * 3
    res = worst_case_sup(fn, box, InnerSolverConfig(alpha=0.2, steps=60, seed=0))
    assert res.value == pytest.approx(3.0, abs=1e-6)


# -- empirical smoothed supremum --------------------------------------------


def test_empirical_smoothed_sup_single_point_equals_k_transform():
    cfg = InnerSolverConfig(alpha=0.1, steps=40, seed=5, tol=0.0)
    point = np.array([0.8])
    lhs = empirical_smoothed_sup(quad(), [point], gaussian(1.0), cfg)
    rhs = k_transform(quad(), point, gaussian(1.0), cfg).value
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_empirical_smoothed_sup_bounded_by_mean_transform():
    data = np.array([-1.5, 0.0, 1.5])
    kspec = gaussian(0.5)
    cfg = InnerSolverConfig(alpha=0.1, steps=60, seed=0)
    lhs = empirical_smoothed_sup(quad(), data, kspec, cfg)
    us = grid_1d(-6.0, 6.0, 1e-4)
    ls = 1 + us * us
    rhs = np.mean([brute_force_k_transform(us, ls, [x], kspec) for x in data])
    assert lhs <= rhs + 1e-8


def test_empirical_smoothed_sup_constant():
    data = np.array([0.0, 1.0])
    val = empirical_smoothed_sup(constant(2.0), data, gaussian(1.0),
                                 InnerSolverConfig(alpha=0.1, steps=20))
    assert val == pytest.approx(2.0, rel=1e-9)


# -- sigma-star and idro regularizer ----------------------------------------


def test_sigma_star_values():
    assert sigma_star(1.0, 1.0, 2.0) == 1.0
    assert sigma_star(1.0, 2.0, 2.0) == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-12)
    for bad in [(0.0, 1.0, 2.0), (1.0, 0.0, 2.0), (1.0, 1.0, -1.0)]:
        with pytest.raises(DomainError):
            sigma_star(*bad)


def test_sigma_star_certifies_concavity_at_maximizer():
    # l(u) = 1 + u^2, Gaussian sigma = 1 < sigma*: the detected stationary
    # point must be a maximum (negative second difference)
    res = k_transform(quad(), [0.0], gaussian(1.0), CFG)
    u = float(res.u_star[0])
    thr = sigma_star(u - 0.0, 1.0 + u * u, 2.0)
    assert 1.0 < thr
    h = 1e-4
    f = [(1 + (u + k * h) ** 2) * math.exp(-0.5 * (u + k * h) ** 2) for k in (-1, 0, 1)]
    assert f[0] - 2 * f[1] + f[2] <= 0.0


def test_idro_regularizer():
    assert idro_regularizer(np.zeros(4), np.eye(4)) == 0.0
    assert idro_regularizer([2.0], [[1.0]]) == pytest.approx(2.0)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 2))
    K = gram(gaussian(1.0), X)
    l = rng.uniform(0.5, 2.0, size=5)
    # independent dense-inverse oracle
    oracle = float(l @ np.linalg.inv(K + 1e-10 * np.eye(5)) @ l)
    assert idro_regularizer(l, K, ridge=1e-10) ** 2 == pytest.approx(oracle, rel=1e-8)


def test_idro_rejects_singular_gram_without_ridge():
    with pytest.raises(NumericalError, match="ridge"):
        idro_regularizer(np.ones(3), np.ones((3, 3)))
    # the advised ridge fixes it
    assert idro_regularizer(np.ones(3), np.ones((3, 3)), ridge=1e-8) > 0


# -- brute-force oracle ------------------------------------------------------


def test_brute_force_refinement_consistency():
    kspec = gaussian(1.0)
    coarse = grid_1d(-5.0, 5.0, 1e-2)
    fine = grid_1d(-5.0, 5.0, 1e-4)
    v_coarse = brute_force_k_transform(coarse, 1 + coarse ** 2, [0.3], kspec)
    v_fine = brute_force_k_transform(fine, 1 + fine ** 2, [0.3], kspec)
    # slack 2 * step * Lipschitz bound of the 1-d product objective
    assert abs(v_fine - v_coarse) <= 2 * 1e-2 * 4.0
    assert v_fine >= v_coarse - 1e-12


def test_brute_force_constant_and_ro_limit():
    us = grid_1d(-2.0, 2.0, 1e-3)
    assert brute_force_k_transform(us, np.full_like(us, 3.0), [0.5],
                                   gaussian(1.0)) == pytest.approx(3.0)
    huge = brute_force_k_transform(us, 1 + us ** 2, [0.5], gaussian(1e8))
    assert huge == pytest.approx(float((1 + us ** 2).max()), abs=1e-6)


# -- cross-op invariants ------------------------------------------------------


def test_majorant_suite_small():
    ok, detail = check_majorant(n_configs=40, seed=123)
    assert ok, detail


def test_sandwich_instance():
    ok, detail = check_sandwich()
    assert ok, detail


def test_sigma_limit_sweep():
    ok, detail = check_sigma_limits()
    assert ok, detail


def test_inner_config_validation():
    with pytest.raises(ConfigError):
        InnerSolverConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        InnerSolverConfig(alpha=0.1, steps=0)
    cfg = InnerSolverConfig(alpha=0.1, seed=9)
    assert cfg.for_sample(3) == cfg.for_sample(3)
    assert cfg.for_sample(3) != cfg.for_sample(4)
