"""Majorant surrogate losses and their solvers.

Each envelope is a supremum over a perturbed input u of the loss combined
with a proximity term: the kernel product (k-transform), the transport-cost
penalty (c-transform / Moreau envelope), the feature-space distance penalty,
or the norm penalty (Pasch-Hausdorff).  Inner maximization is plain
fixed-step gradient ascent started at the anchor point x, which is always
kept in the candidate set so every envelope value dominates the loss at x
by construction.

Grid-search oracles used to validate the ascent path live here as well:
``brute_force_k_transform`` and ``worst_case_sup`` (the latter is also the
inner solver of worst-case robust training on low-dimensional domains).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    NumericalError,
    PossiblyUnboundedError,
)
from .kernels import CostSpec, KernelSpec, as_points, kernel_batch

_SEED_MASK = (1 << 63) - 1


def _mix_seed(*parts) -> int:
    ss = np.random.SeedSequence([int(p) & _SEED_MASK for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class InnerSolverConfig:
    """Settings for the inner maximization (gradient ascent) loop.

    The step size has no safe universal default, so it is a required field.
    ``log_scale=None`` lets the k-transform pick the log-space objective and
    fall back to the direct product if the loss is not strictly positive.
    """

    alpha: float
    steps: int = 15
    restarts: int = 0
    restart_radius: float = 1.0
    box: tuple | list | None = None
    log_scale: bool | None = None
    seed: int = 0
    tol: float = 1e-9
    grid_step: float = 1e-4
    ceiling: float = 1e12

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("inner solver needs steps >= 1")
        if not self.alpha > 0:
            raise ConfigError("inner step size alpha must be positive")
        if self.restarts < 0:
            raise ConfigError("restarts must be nonnegative")

    def for_sample(self, index: int) -> "InnerSolverConfig":
        """Derived config whose restart PRNG is split per sample index."""
        return replace(self, seed=_mix_seed(self.seed, index))


@dataclass
class SurrogateResult:
    value: float
    u_star: np.ndarray
    trace: list[float] = field(default_factory=list)
    converged: bool = False


def _box_arrays(box, dim):
    """Normalize a box given as (lo, hi) scalars/vectors or rows of [lo, hi]."""
    if box is None:
        return None
    arr = np.asarray(box, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 2:
        lo = np.broadcast_to(arr[:, 0], (dim,)).copy()
        hi = np.broadcast_to(arr[:, 1], (dim,)).copy()
    else:
        lo_s, hi_s = box
        lo = np.broadcast_to(np.asarray(lo_s, dtype=np.float64), (dim,)).copy()
        hi = np.broadcast_to(np.asarray(hi_s, dtype=np.float64), (dim,)).copy()
    if np.any(lo > hi):
        raise ConfigError("box lower bounds exceed upper bounds")
    return lo, hi


def _clip(u, box):
    if box is None:
        return u
    return np.clip(u, box[0], box[1])


def _starts(x, cfg: InnerSolverConfig, box):
    starts = [x]
    if cfg.restarts:
        rng = np.random.default_rng(_mix_seed(cfg.seed, 0x5EED))
        for _ in range(cfg.restarts):
            starts.append(_clip(x + cfg.restart_radius * rng.normal(size=x.size), box))
    return starts


class _Best:
    def __init__(self):
        self.value = -math.inf
        self.u = None

    def offer(self, v, u):
        if v > self.value:
            self.value = v
            self.u = u.copy()


def _ascend(vag, x, cfg: InnerSolverConfig, ceiling=None):
    """Multi-restart projected gradient ascent; returns (best, trace, converged).

    ``vag(u) -> (value, grad)``.  The anchor x is the first start, so the
    best value dominates the objective at x.  When a ceiling is given and
    the loop ends mid-climb, ascent continues with doubling step sizes to
    flush out unbounded objectives (raises DivergenceError past the
    ceiling); the extension's probes stay in the candidate set.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    box = _box_arrays(cfg.box, x.size)
    best = _Best()
    trace: list[float] = []
    converged = False
    for si, u0 in enumerate(_starts(x, cfg, box)):
        u = np.asarray(u0, dtype=np.float64).copy()
        v, g = vag(u)
        if not _check_step(v, 0, ceiling):
            continue
        best.offer(v, u)
        run_trace = [v]
        prev = v
        run_converged = False
        for step in range(1, cfg.steps + 1):
            u = _clip(u + cfg.alpha * g, box)
            v, g = vag(u)
            if not _check_step(v, step, ceiling):
                break
            best.offer(v, u)
            run_trace.append(v)
            if abs(v - prev) < cfg.tol:
                run_converged = True
                break
            prev = v
        if si == 0:
            trace = run_trace
            converged = run_converged
        if ceiling is not None and not run_converged and run_trace[-1] > run_trace[0]:
            _extend_for_divergence(vag, u, g, best, cfg, box, ceiling)
    return best, trace, converged


def _check_step(v, step, ceiling):
    """True to keep ascending, False to abandon the run.

    Without a ceiling (k-transform family) any non-finite objective is a
    failure.  Penalty envelopes instead abandon iterates that dove to -inf
    or NaN (the anchor candidate still guards the value) and treat only
    +inf or a ceiling crossing as evidence of an unbounded envelope.
    """
    if ceiling is None:
        if not np.isfinite(v):
            raise NumericalError(f"non-finite inner objective at ascent step {step}")
        return True
    if v == np.inf or v > ceiling:
        raise DivergenceError(
            f"inner objective exceeded the divergence ceiling {ceiling:g} at step {step}"
        )
    return np.isfinite(v)


def _extend_for_divergence(vag, u, g, best, cfg, box, ceiling):
    alpha = cfg.alpha
    prev = best.value
    for _ in range(64):
        alpha *= 2.0
        u = _clip(u + alpha * g, box)
        v, g = vag(u)
        if v == np.inf or v > ceiling:
            raise DivergenceError(
                f"inner objective exceeded the divergence ceiling {ceiling:g}; "
                "the envelope appears unbounded"
            )
        if not np.isfinite(v) or v < prev:
            break
        best.offer(v, u)
        prev = v


class _NonPositiveLoss(Exception):
    pass


def _cost_vg(family):
    """(cost, grad) of the displacement d = u - x, as one fast closure."""
    if family == "sq-l2-half":
        return lambda d: (0.5 * float(d @ d), d)
    if family == "sq-l2":
        return lambda d: (float(d @ d), 2.0 * d)
    if family == "l2":
        def f(d):
            n = math.sqrt(float(d @ d))
            return n, (d / n if n > 0.0 else np.zeros_like(d))
        return f

    def g(d):
        return float(np.abs(d).sum()), np.sign(d)

    return g


def k_transform(loss_at, x, kspec: KernelSpec, cfg: InnerSolverConfig) -> SurrogateResult:
    """sup_u loss(u) * k(u, x), ascended from u = x.

    With ``cfg.log_scale`` unset the ascent runs on the log-space objective
    ln loss(u) - cost(u, x)/sigma (numerically stable when the kernel
    underflows) and falls back to the direct product if the loss is not
    strictly positive along the way.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    use_log = cfg.log_scale
    if use_log is None or use_log:
        try:
            return _k_transform_log_path(loss_at, x, kspec, cfg)
        except _NonPositiveLoss:
            if use_log:
                raise DomainError(
                    "log-scale inner maximization needs a strictly positive loss; "
                    "set a positivity offset or log_scale=False"
                ) from None
    return _k_transform_direct(loss_at, x, kspec, cfg)


def k_transform_log(loss_at, x, kspec: KernelSpec, cfg: InnerSolverConfig) -> SurrogateResult:
    """The k-transform via its log-space rewrite; requires loss > 0."""
    x = np.asarray(x, dtype=np.float64).ravel()
    try:
        return _k_transform_log_path(loss_at, x, kspec, cfg)
    except _NonPositiveLoss:
        raise DomainError(
            "log-scale inner maximization needs a strictly positive loss"
        ) from None


def _k_transform_direct(loss_at, x, kspec, cfg) -> SurrogateResult:
    sigma = kspec.sigma
    cvg = _cost_vg(kspec.cost.family)
    lvag = loss_at.value_and_grad

    def vag(u):
        lv, lg = lvag(u)
        c, gc = cvg(u - x)
        kv = math.exp(-c / sigma)
        return lv * kv, lg * kv - (lv * kv / sigma) * gc

    best, trace, converged = _ascend(vag, x, cfg)
    return SurrogateResult(best.value, best.u, trace, converged)


def _k_transform_log_path(loss_at, x, kspec, cfg) -> SurrogateResult:
    sigma = kspec.sigma
    cvg = _cost_vg(kspec.cost.family)
    lvag = loss_at.value_and_grad

    def vag(u):
        lv, lg = lvag(u)
        if not lv > 0.0:
            raise _NonPositiveLoss
        c, gc = cvg(u - x)
        return math.log(lv) - c / sigma, lg / lv - gc / sigma

    best, trace, converged = _ascend(vag, x, cfg)
    return SurrogateResult(
        math.exp(best.value), best.u, [math.exp(t) for t in trace], converged
    )


def c_transform(loss_at, x, y: float, cost_spec: CostSpec,
                cfg: InnerSolverConfig) -> SurrogateResult:
    """Moreau-envelope surrogate sup_u loss(u) - y * cost(u, x).

    Raises DivergenceError when the objective climbs past ``cfg.ceiling``
    (the envelope is unbounded for y below the loss's growth rate).
    """
    if not y > 0:
        raise ConfigError("c_transform needs a positive penalty weight y")
    x = np.asarray(x, dtype=np.float64).ravel()
    cvg = _cost_vg(cost_spec.family)
    lvag = loss_at.value_and_grad

    def vag(u):
        lv, lg = lvag(u)
        c, gc = cvg(u - x)
        return lv - y * c, lg - y * gc

    best, trace, converged = _ascend(vag, x, cfg, ceiling=cfg.ceiling)
    return SurrogateResult(best.value, best.u, trace, converged)


def kernel_distance_envelope(loss_at, x, y: float, kspec: KernelSpec,
                             cfg: InnerSolverConfig) -> SurrogateResult:
    """sup_u loss(u) - (y/2) * ||phi(u) - phi(x)||^2 in the kernel feature space.

    The penalty equals y * (1 - k(u, x)), so it is bounded by y; losses that
    grow without bound must be boxed or the ceiling check will trip.
    """
    if not y > 0:
        raise ConfigError("kernel_distance_envelope needs a positive penalty weight y")
    x = np.asarray(x, dtype=np.float64).ravel()
    sigma = kspec.sigma
    cvg = _cost_vg(kspec.cost.family)
    lvag = loss_at.value_and_grad

    def vag(u):
        lv, lg = lvag(u)
        c, gc = cvg(u - x)
        kv = math.exp(-c / sigma)
        return lv - y * (1.0 - kv), lg - (y * kv / sigma) * gc

    best, trace, converged = _ascend(vag, x, cfg, ceiling=cfg.ceiling)
    return SurrogateResult(best.value, best.u, trace, converged)


def pasch_hausdorff(us, ls, x: float, y: float) -> float:
    """max over grid points of l(u) - y * |u - x| (1-d sampled loss).

    Raises PossiblyUnboundedError when the maximizer sits at the grid edge
    with the envelope still strictly increasing toward it, i.e. no
    y-Lipschitz majorant exists on the evidence of this grid.
    """
    if not y > 0:
        raise ConfigError("pasch_hausdorff needs a positive Lipschitz weight y")
    us = np.asarray(us, dtype=np.float64).ravel()
    ls = np.asarray(ls, dtype=np.float64).ravel()
    if us.size != ls.size or us.size < 2:
        raise ConfigError("pasch_hausdorff needs matching grids with at least two points")
    f = ls - y * np.abs(us - float(x))
    i = int(np.argmax(f))
    slack = 1e-12 * max(1.0, float(np.abs(f).max()))
    if (i == 0 and f[0] > f[1] + slack) or (i == f.size - 1 and f[-1] > f[-2] + slack):
        raise PossiblyUnboundedError(
            "envelope is still increasing at the grid boundary; "
            f"no {y}-Lipschitz majorant on this grid"
        )
    return float(f[i])


def grid_1d(lo: float, hi: float, step: float) -> np.ndarray:
    """Inclusive uniform grid used by the dense-search oracles."""
    n = int(round((hi - lo) / step)) + 1
    return np.linspace(lo, hi, max(n, 2))


def _grid_points(box, step):
    dims = [grid_1d(lo, hi, step) for lo, hi in box]
    if len(dims) == 1:
        return dims[0][:, None]
    mesh = np.meshgrid(*dims, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _values_on(loss_at, points):
    batch = getattr(loss_at, "value_batch", None)
    if batch is not None:
        return np.asarray(batch(points), dtype=np.float64)
    return np.array([loss_at.value(p) for p in points], dtype=np.float64)


def worst_case_sup(loss_at, domain, cfg: InnerSolverConfig) -> SurrogateResult:
    """Supremum of the loss over a bounded domain.

    ``domain`` is either an explicit array of candidate points or a box of
    per-coordinate [lo, hi] bounds.  Boxes of dimension <= 2 are searched on
    a dense grid at ``cfg.grid_step`` resolution; higher dimensions use
    multi-restart projected gradient ascent from the box interior.
    """
    domain_arr = np.asarray(domain, dtype=np.float64)
    # A box is (lo, hi) or rows of [lo, hi]; anything else is an explicit
    # candidate point list searched directly.
    box = None
    if domain_arr.ndim == 1 and domain_arr.shape == (2,) and domain_arr[0] <= domain_arr[1]:
        box = [(float(domain_arr[0]), float(domain_arr[1]))]
    elif domain_arr.ndim == 2 and domain_arr.shape[1] == 2 and np.all(
        domain_arr[:, 0] <= domain_arr[:, 1]
    ):
        box = [tuple(row) for row in domain_arr]
    if box is not None:
        if not np.all(np.isfinite(domain_arr)):
            raise ConfigError("worst_case_sup needs a bounded domain")
        if len(box) <= 2:
            points = _grid_points(box, cfg.grid_step)
            vals = _values_on(loss_at, points)
            i = int(np.argmax(vals))
            return SurrogateResult(float(vals[i]), points[i].copy(), [float(vals[i])], True)
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        center = 0.5 * (lo + hi)
        sub = replace(cfg, box=(lo, hi), restarts=max(cfg.restarts, 8),
                      restart_radius=float(np.max(hi - lo)))
        best, trace, converged = _ascend(
            lambda u: loss_at.value_and_grad(u), center, sub
        )
        return SurrogateResult(best.value, best.u, trace, converged)
    points = as_points(domain_arr)
    vals = _values_on(loss_at, points)
    i = int(np.argmax(vals))
    return SurrogateResult(float(vals[i]), points[i].copy(), [float(vals[i])], True)


def empirical_smoothed_sup(loss_at, data, kspec: KernelSpec,
                           cfg: InnerSolverConfig) -> float:
    """sup_u of the kernel-weighted empirical loss mean_i k(xi_i, u) loss(u).

    Ascent restarts at every data point (the peaks of the kernel mixture).
    """
    pts = as_points(data)
    if pts.shape[0] == 0:
        raise ConfigError("empirical_smoothed_sup needs non-empty data")
    sigma = kspec.sigma
    fam = kspec.cost.family

    def vag(u):
        lv, lg = loss_at.value_and_grad(u)
        ks = kernel_batch(kspec, pts, u)
        D = u[None, :] - pts
        if fam == "sq-l2-half":
            gc = D
        elif fam == "sq-l2":
            gc = 2.0 * D
        elif fam == "l2":
            nrm = np.sqrt((D * D).sum(axis=1, keepdims=True))
            gc = np.divide(D, nrm, out=np.zeros_like(D), where=nrm > 0)
        else:
            gc = np.sign(D)
        gk_mean = (-(ks[:, None] / sigma) * gc).mean(axis=0)
        kmean = ks.mean()
        return kmean * lv, kmean * lg + lv * gk_mean

    box = _box_arrays(cfg.box, pts.shape[1])
    best = _Best()
    rng = np.random.default_rng(_mix_seed(cfg.seed, 0x5EED))
    starts = [p for p in pts]
    for j in range(cfg.restarts):
        base = pts[j % pts.shape[0]]
        starts.append(_clip(base + cfg.restart_radius * rng.normal(size=base.size), box))
    for u0 in starts:
        sub = replace(cfg, restarts=0)
        run_best, _, _ = _ascend(vag, u0, sub)
        best.offer(run_best.value, run_best.u)
    return best.value


def sigma_star(delta: float, l_at_ustar: float, ddl_at_ustar: float) -> float:
    """Bandwidth threshold below which a stationary inner point is a maximum.

    2 d^2 / (sqrt(1 + 4 d^2 l''(u*)/l(u*)) - 1) for d = u* - x.  Only defined
    for d != 0, l(u*) > 0 and l''(u*) > 0; a concave loss needs no threshold.
    """
    if delta == 0:
        raise DomainError("sigma_star is undefined at delta = 0 (u* coincides with x)")
    if not l_at_ustar > 0:
        raise DomainError("sigma_star needs a positive loss value at u*")
    if not ddl_at_ustar > 0:
        raise DomainError(
            "sigma_star needs positive curvature at u*; a concave loss needs no threshold"
        )
    d2 = float(delta) ** 2
    return 2.0 * d2 / (math.sqrt(1.0 + 4.0 * d2 * ddl_at_ustar / l_at_ustar) - 1.0)


def idro_regularizer(loss_values, gram_matrix, ridge: float = 0.0) -> float:
    """sqrt(l^T (K + ridge I)^{-1} l) via a symmetric positive-definite solve."""
    l = np.asarray(loss_values, dtype=np.float64).ravel()
    K = np.asarray(gram_matrix, dtype=np.float64)
    if K.shape != (l.size, l.size):
        raise ConfigError(f"gram matrix shape {K.shape} does not match {l.size} losses")
    if ridge < 0:
        raise ConfigError("ridge must be nonnegative")
    if ridge:
        K = K + ridge * np.eye(l.size)
    try:
        fac = cho_factor(K, lower=True)
    except LinAlgError as err:
        raise NumericalError(
            "gram matrix is not positive definite; increase the ridge"
        ) from err
    val = float(l @ cho_solve(fac, l))
    return math.sqrt(max(val, 0.0))


def brute_force_k_transform(us, ls, x, kspec: KernelSpec) -> float:
    """Grid-search oracle for the k-transform: max over grid of l(u) k(u, x)."""
    pts = as_points(us)
    ls = np.asarray(ls, dtype=np.float64).ravel()
    if pts.shape[0] != ls.size:
        raise ConfigError("grid points and sampled losses disagree in length")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float((ls * kernel_batch(kspec, pts, x)).max())
