"""Transport costs, exponential kernels, kernel distances, and the MMD.

Kernels follow the convention k(u, x) = exp(-c(u, x) / sigma), so the
Gaussian kernel is the 'sq-l2-half' cost (half squared Euclidean) and
sigma is the squared length scale, not its square root.  The Laplacian
kernel is the 'l2' cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch

COST_FAMILIES = ("sq-l2-half", "sq-l2", "l2", "l1")


@dataclass(frozen=True)
class CostSpec:
    """Transport cost family; nonnegative, symmetric, zero at coincidence."""

    family: str = "sq-l2-half"

    def __post_init__(self):
        if self.family not in COST_FAMILIES:
            raise ConfigError(f"unknown cost family {self.family!r}; choose from {COST_FAMILIES}")


@dataclass(frozen=True)
class KernelSpec:
    """Exponential kernel exp(-cost/sigma) with bandwidth sigma > 0."""

    cost: CostSpec = CostSpec()
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"kernel bandwidth must be positive, got {self.sigma}")


def gaussian(sigma: float) -> KernelSpec:
    return KernelSpec(CostSpec("sq-l2-half"), sigma)


def laplacian(sigma: float) -> KernelSpec:
    return KernelSpec(CostSpec("l2"), sigma)


def _check_dims(u, x):
    u = np.asarray(u, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if u.shape != x.shape:
        raise ShapeMismatch(f"cost operands must share a shape: {u.shape} vs {x.shape}")
    return u, x


def cost(spec: CostSpec, u, x) -> float:
    u, x = _check_dims(u, x)
    d = u - x
    if spec.family == "sq-l2-half":
        return 0.5 * float(np.dot(d, d))
    if spec.family == "sq-l2":
        return float(np.dot(d, d))
    if spec.family == "l2":
        return float(np.sqrt(np.dot(d, d)))
    return float(np.abs(d).sum())


def grad_cost(spec: CostSpec, u, x) -> np.ndarray:
    """Gradient of cost in u; subgradient 0 at coincidence for l1/l2."""
    u, x = _check_dims(u, x)
    d = u - x
    if spec.family == "sq-l2-half":
        return d
    if spec.family == "sq-l2":
        return 2.0 * d
    if spec.family == "l2":
        nrm = np.sqrt(np.dot(d, d))
        if nrm == 0.0:
            return np.zeros_like(d)
        return d / nrm
    return np.sign(d)


def cost_batch(spec: CostSpec, U, x) -> np.ndarray:
    """cost(spec, U[i], x) for each row of U, vectorized."""
    U = np.asarray(U, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    D = U - x
    if D.ndim == 1:
        D = D[:, None]
    if spec.family == "sq-l2-half":
        return 0.5 * (D * D).sum(axis=1)
    if spec.family == "sq-l2":
        return (D * D).sum(axis=1)
    if spec.family == "l2":
        return np.sqrt((D * D).sum(axis=1))
    return np.abs(D).sum(axis=1)


def kernel(spec: KernelSpec, u, x) -> float:
    """Kernel value in (0, 1]; equals 1 iff the transport cost vanishes."""
    return float(np.exp(-cost(spec.cost, u, x) / spec.sigma))


def kernel_and_grad(spec: KernelSpec, u, x):
    """(k, grad_u k); grad_u k = -k * grad_u c / sigma."""
    k = kernel(spec, u, x)
    return k, (-k / spec.sigma) * grad_cost(spec.cost, u, x)


def kernel_batch(spec: KernelSpec, U, x) -> np.ndarray:
    return np.exp(-cost_batch(spec.cost, U, x) / spec.sigma)


def kernel_distance_sq(spec: KernelSpec, u, x) -> float:
    """Squared feature-space distance; 2 - 2 k(u, x) for normalized kernels."""
    return 2.0 - 2.0 * kernel(spec, u, x)


def as_points(X) -> np.ndarray:
    """Coerce to an (n, d) point array; a 1-d array is n scalar points."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    return X


def gram(spec: KernelSpec, X, Y=None) -> np.ndarray:
    """Kernel matrix K[i, j] = k(X[i], Y[j]) (Y defaults to X)."""
    X = as_points(X)
    Y = X if Y is None else as_points(Y)
    if X.shape[1] != Y.shape[1]:
        raise ShapeMismatch(f"point sets differ in dimension: {X.shape[1]} vs {Y.shape[1]}")
    D = X[:, None, :] - Y[None, :, :]
    fam = spec.cost.family
    if fam == "sq-l2-half":
        C = 0.5 * (D * D).sum(axis=2)
    elif fam == "sq-l2":
        C = (D * D).sum(axis=2)
    elif fam == "l2":
        C = np.sqrt((D * D).sum(axis=2))
    else:
        C = np.abs(D).sum(axis=2)
    return np.exp(-C / spec.sigma)


def mmd(X, Y, spec: KernelSpec) -> float:
    """Biased (V-statistic) maximum mean discrepancy between two samples.

    sqrt of mean k(X, X) - 2 mean k(X, Y) + mean k(Y, Y), clamped at zero
    before the root.
    """
    X = as_points(X)
    Y = as_points(Y)
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ConfigError("mmd needs non-empty sample sets")
    sq = gram(spec, X).mean() - 2.0 * gram(spec, X, Y).mean() + gram(spec, Y).mean()
    return float(np.sqrt(max(sq, 0.0)))
