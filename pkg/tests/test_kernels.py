"""Transport costs, kernels, kernel distance, and the MMD estimator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arks.errors import ConfigError, ShapeMismatch
from arks.kernels import (
    COST_FAMILIES,
    CostSpec,
    KernelSpec,
    cost,
    gaussian,
    gram,
    grad_cost,
    kernel,
    kernel_and_grad,
    kernel_distance_sq,
    laplacian,
    mmd,
)
from arks.tape import finite_diff_grad


@pytest.mark.parametrize("family", COST_FAMILIES)
def test_cost_zero_at_coincidence(family):
    u = np.array([0.3, -1.0, 2.0])
    assert cost(CostSpec(family), u, u) == 0.0


def test_cost_values():
    assert cost(CostSpec("sq-l2-half"), [1.0, 1.0], [0.0, 0.0]) == pytest.approx(1.0)
    assert cost(CostSpec("l1"), [1.0, -2.0], [0.0, 0.0]) == pytest.approx(3.0)
    assert cost(CostSpec("sq-l2"), [1.0, 1.0], [0.0, 0.0]) == pytest.approx(2.0)
    assert cost(CostSpec("l2"), [3.0, 4.0], [0.0, 0.0]) == pytest.approx(5.0)


def test_cost_dimension_mismatch():
    with pytest.raises(ShapeMismatch):
        cost(CostSpec(), [1.0], [1.0, 2.0])


def test_kernel_peak_and_direct_value():
    u = np.array([0.5, 0.5])
    assert kernel(gaussian(2.0), u, u) == 1.0
    # ||u - x||^2 = 2 sigma gives exp(-1)
    sigma = 0.6
    x = u + np.array([math.sqrt(2 * sigma), 0.0])
    assert kernel(gaussian(sigma), u, x) == pytest.approx(math.exp(-1.0), rel=1e-12)


def test_kernel_sigma_to_infinity():
    u, x = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert kernel(gaussian(1e8), u, x) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=4),
       st.lists(st.floats(-5, 5), min_size=2, max_size=4),
       st.sampled_from(COST_FAMILIES),
       st.floats(0.05, 10.0))
def test_kernel_symmetric_and_bounded(u, x, family, sigma):
    n = min(len(u), len(x))
    u, x = np.array(u[:n]), np.array(x[:n])
    spec = KernelSpec(CostSpec(family), sigma)
    k_ux = kernel(spec, u, x)
    assert k_ux == kernel(spec, x, u)
    assert 0.0 < k_ux <= 1.0
    c = cost(spec.cost, u, x)
    if c == 0.0:
        assert k_ux == 1.0
    elif c / sigma > 1e-12:  # below this exp(-c/sigma) rounds to 1.0
        assert k_ux < 1.0


def test_kernel_monotone_in_sigma():
    rng = np.random.default_rng(0)
    for family in COST_FAMILIES:
        u, x = rng.normal(size=3), rng.normal(size=3)
        vals = [kernel(KernelSpec(CostSpec(family), s), u, x) for s in (0.1, 1.0, 10.0)]
        assert vals[0] < vals[1] < vals[2]


def test_kernel_distance_identity():
    spec = gaussian(1.0)
    u, x = np.array([1.0]), np.array([0.0])
    # oracle: expand <phi(u)-phi(x), phi(u)-phi(x)> = k(u,u) + k(x,x) - 2k(u,x)
    expansion = kernel(spec, u, u) + kernel(spec, x, x) - 2 * kernel(spec, u, x)
    assert kernel_distance_sq(spec, u, x) == pytest.approx(expansion, rel=1e-14)
    assert kernel_distance_sq(spec, u, u) == 0.0
    # k = exp(-1) gives 2 - 2/e
    sigma = 0.5
    x2 = np.array([1.0])
    u2 = np.array([0.0])  # cost = 0.5, sigma 0.5 -> k = exp(-1)
    assert kernel_distance_sq(gaussian(sigma), u2, x2) == pytest.approx(
        2 - 2 * math.exp(-1.0), rel=1e-12)
    assert kernel_distance_sq(gaussian(sigma), u2, x2) == pytest.approx(1.26424, abs=1e-5)


def test_kernel_distance_saturates_at_two():
    spec = gaussian(0.1)
    assert kernel_distance_sq(spec, np.array([100.0]), np.array([-100.0])) == pytest.approx(2.0)


def test_gram_psd():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(15, 4))
    for make in (gaussian, laplacian):
        K = gram(make(0.7), X)
        assert np.allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8


def test_kernel_gradient_matches_fd_away_from_coincidence():
    rng = np.random.default_rng(4)
    for family in ("sq-l2-half", "sq-l2", "l2"):
        spec = KernelSpec(CostSpec(family), 0.8)
        u, x = rng.normal(size=3) + 2.0, rng.normal(size=3)
        _, g = kernel_and_grad(spec, u, x)
        fd = finite_diff_grad(lambda v: kernel(spec, v, x), u)
        assert np.abs(g - fd).max() / np.abs(fd).max() < 1e-4


def test_subgradient_zero_at_coincidence():
    u = np.array([1.0, 2.0])
    for family in ("l1", "l2"):
        assert np.all(grad_cost(CostSpec(family), u, u) == 0.0)


def test_mmd_identical_samples_is_zero():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(10, 2))
    assert mmd(X, X, gaussian(1.0)) == 0.0


def test_mmd_single_points_closed_form():
    spec = gaussian(1.0)
    x, y = np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]])
    expected = math.sqrt(2.0 - 2.0 * kernel(spec, x[0], y[0]))
    assert mmd(x, y, spec) == pytest.approx(expected, rel=1e-12)


def test_mmd_empty_set_rejected():
    with pytest.raises(ConfigError):
        mmd(np.zeros((0, 2)), np.zeros((3, 2)), gaussian(1.0))


def test_mmd_scalar_points_as_one_dim():
    # 1-d data passed as a flat array is n scalar points, not one vector
    a = np.array([0.0, 1.0, 2.0])
    assert mmd(a, a, gaussian(1.0)) == 0.0
    assert mmd(a, a + 5.0, gaussian(1.0)) > 0.5


def test_bad_specs_rejected():
    with pytest.raises(ConfigError):
        CostSpec("cosine")
    with pytest.raises(ConfigError):
        KernelSpec(CostSpec(), 0.0)
