"""Outer training loops: ERM, ARKS, WRM, PGD adversarial training, RO.

All methods share one minibatch SGD skeleton and differ in how the
per-sample gradient is produced: ERM differentiates the plain loss, the
robust methods first solve an inner maximization for an adversarial input
u* and then take the loss gradient at u* with the maximizer held fixed
(the kernel factor of the ARKS surrogate is parameter-free, so the plain
loss gradient at u* is the surrogate descent direction up to that factor;
``scale_grad_by_kernel`` applies it for exact surrogate descent).

Randomness (shuffling, inner restarts) flows from the config seed only, so
identical (data, config) runs produce bit-identical reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError
from .kernels import CostSpec, KernelSpec, kernel
from .models import ModelLoss, Fn, RlsProblem, Sample, init_params, rls_loss_grads
from .surrogates import (
    InnerSolverConfig,
    _mix_seed,
    c_transform,
    grid_1d,
    k_transform,
    worst_case_sup,
)

METHODS = ("erm", "arks", "wrm", "pgd-at", "ro")


@dataclass(frozen=True)
class TrainConfig:
    method: str
    epochs: int
    batch_size: int
    lr: float
    seed: int = 0
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    weight_decay: float = 0.0
    sigma: float | None = None
    cost: str = "sq-l2-half"
    wrm_y: float | None = None
    pgd_delta: float | None = None
    pgd_clip: tuple[float, float] | None = None
    ro_domain: tuple | list | None = None
    inner: InnerSolverConfig | None = None
    swa: bool = False
    swa_start: int = 0
    scale_grad_by_kernel: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown training method {self.method!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        needs_inner = self.method in ("arks", "wrm", "pgd-at", "ro")
        if needs_inner and self.inner is None:
            raise ConfigError(f"method {self.method!r} needs an inner solver config")
        if self.method == "arks" and self.sigma is None:
            raise ConfigError("arks needs a kernel bandwidth sigma")
        if self.method == "wrm" and self.wrm_y is None:
            raise ConfigError("wrm needs a penalty weight wrm_y")
        if self.method == "pgd-at" and self.pgd_delta is None:
            raise ConfigError("pgd-at needs a perturbation budget pgd_delta")
        if self.method == "ro" and self.ro_domain is None:
            raise ConfigError("ro needs a bounded domain ro_domain")


@dataclass
class TrainReport:
    params: np.ndarray
    objectives: list[float]
    wall_times: list[float]
    seed: int
    config: TrainConfig
    swa_params: np.ndarray | None = None
    aborted: bool = False
    abort_info: str | None = None


def swa_average(snapshots) -> np.ndarray:
    """Coordinatewise mean of parameter snapshots."""
    if not len(snapshots):
        raise ConfigError("swa_average needs at least one snapshot")
    arrs = [np.asarray(s, dtype=np.float64).ravel() for s in snapshots]
    n = arrs[0].size
    if any(a.size != n for a in arrs):
        raise ConfigError("parameter snapshots differ in length")
    return np.mean(arrs, axis=0)


def _inner_cfg(cfg: TrainConfig, idx: int) -> InnerSolverConfig:
    inner = cfg.inner
    return inner.for_sample(idx) if inner.restarts else inner


def _wrap_inner(err, epoch, batch, idx):
    return type(err)(f"{err} (epoch {epoch}, batch {batch}, sample {idx})")


def train(model: ModelLoss, data: list[Sample], cfg: TrainConfig) -> TrainReport:
    """Minibatch training of a parametric model under the configured method."""
    if not data:
        raise ConfigError("training needs a non-empty dataset")
    params = init_params(model.spec, cfg.seed)
    kspec = KernelSpec(CostSpec(cfg.cost), cfg.sigma) if cfg.method == "arks" else None
    cspec = CostSpec(cfg.cost)
    rng = np.random.default_rng(_mix_seed(cfg.seed, 0xBA7C4))
    lr = cfg.lr
    objectives: list[float] = []
    wall_times: list[float] = []
    snapshots: list[np.ndarray] = []
    report = TrainReport(params, objectives, wall_times, cfg.seed, cfg)
    n = len(data)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if epoch in cfg.lr_decay_epochs:
            lr *= cfg.lr_decay_factor
        perm = rng.permutation(n)
        total_obj = 0.0
        for bi in range(0, n, cfg.batch_size):
            batch = perm[bi:bi + cfg.batch_size]
            grad = np.zeros_like(params)
            for idx in batch:
                sample = data[int(idx)]
                try:
                    obj, g = _sample_step(model, params, sample, cfg, kspec, cspec, int(idx))
                except (DivergenceError, NumericalError) as err:
                    raise _wrap_inner(err, epoch, bi // cfg.batch_size, int(idx)) from err
                total_obj += obj
                grad += g
            grad /= batch.size
            if cfg.weight_decay:
                grad += cfg.weight_decay * params
            new_params = params - lr * grad
            if not np.all(np.isfinite(new_params)):
                report.aborted = True
                report.abort_info = f"non-finite update at epoch {epoch}, batch {bi // cfg.batch_size}"
                report.params = params
                objectives.append(total_obj / n)
                wall_times.append(time.perf_counter() - t0)
                return report
            params = new_params
        objectives.append(total_obj / n)
        wall_times.append(time.perf_counter() - t0)
        if cfg.swa and epoch >= cfg.swa_start:
            snapshots.append(params.copy())

    report.params = params
    if cfg.swa and snapshots:
        report.swa_params = swa_average(snapshots)
    return report


def _sample_step(model, params, sample, cfg, kspec, cspec, idx):
    """(objective contribution, parameter gradient) for one sample."""
    if cfg.method == "erm":
        return model.loss_and_grad_params(params, sample)

    fn = model.x_fn(params, sample)
    if cfg.method == "arks":
        res = k_transform(fn, sample.x, kspec, _inner_cfg(cfg, idx))
        moved = Sample(res.u_star, sample.y)
        _, g = model.loss_and_grad_params(params, moved)
        if cfg.scale_grad_by_kernel:
            g = g * kernel(kspec, res.u_star, sample.x)
        return res.value, g
    if cfg.method == "wrm":
        res = c_transform(fn, sample.x, cfg.wrm_y, cspec, _inner_cfg(cfg, idx))
        moved = Sample(res.u_star, sample.y)
        _, g = model.loss_and_grad_params(params, moved)
        return res.value, g
    if cfg.method == "ro":
        res = worst_case_sup(fn, cfg.ro_domain, _inner_cfg(cfg, idx))
        moved = Sample(res.u_star, sample.y)
        _, g = model.loss_and_grad_params(params, moved)
        return res.value, g
    # pgd-at: sign-gradient ascent inside the Delta-box, then clip
    from .robusteval import AttackConfig, attack

    acfg = AttackConfig(
        kind="pgd", delta=cfg.pgd_delta, steps=cfg.inner.steps,
        alpha=cfg.inner.alpha, clip=cfg.pgd_clip,
    )
    moved = attack(model, params, sample, acfg)
    return model.loss_and_grad_params(params, moved)


# -- robust least squares training -------------------------------------


def train_rls(problem: RlsProblem, xis, cfg: TrainConfig) -> TrainReport:
    """Train theta on the scalar-uncertainty least squares instance.

    The perturbed variable is the scalar xi: erm averages the sampled
    xi_i, arks runs the k-transform in xi around each sample, wrm the
    c-transform, and ro takes the worst point of a dense xi grid at every
    step (``ro_domain`` interval, ``inner.grid_step`` resolution).
    """
    xis = np.asarray(xis, dtype=np.float64).ravel()
    if xis.size == 0:
        raise ConfigError("training needs a non-empty xi sample")
    if cfg.method not in ("erm", "arks", "wrm", "ro"):
        raise ConfigError(f"method {cfg.method!r} is not supported on the rls instance")
    params = np.zeros(problem.dim)
    kspec = KernelSpec(CostSpec(cfg.cost), cfg.sigma) if cfg.method == "arks" else None
    cspec = CostSpec(cfg.cost)
    rng = np.random.default_rng(_mix_seed(cfg.seed, 0xBA7C4))
    ro_grid = None
    if cfg.method == "ro":
        lo, hi = cfg.ro_domain
        ro_grid = grid_1d(float(lo), float(hi), cfg.inner.grid_step)
    lr = cfg.lr
    objectives: list[float] = []
    wall_times: list[float] = []
    n = xis.size

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if epoch in cfg.lr_decay_epochs:
            lr *= cfg.lr_decay_factor
        perm = rng.permutation(n)
        total_obj = 0.0
        for bi in range(0, n, cfg.batch_size):
            batch = perm[bi:bi + cfg.batch_size]
            if cfg.method == "ro":
                obj, grad = _rls_worst_grid(problem, params, ro_grid)
                total_obj += obj * batch.size
            else:
                # the loss is an exact quadratic in xi for fixed theta, so
                # the inner ascent works on three precomputed coefficients
                r0 = problem.A0 @ params - problem.b
                drift = problem.A1 @ params
                coeffs = (float(r0 @ r0), 2.0 * float(r0 @ drift), float(drift @ drift))
                grad = np.zeros_like(params)
                for idx in batch:
                    xi = float(xis[int(idx)])
                    try:
                        obj, g = _rls_sample_step(problem, params, xi, cfg, kspec,
                                                  cspec, int(idx), coeffs)
                    except (DivergenceError, NumericalError) as err:
                        raise _wrap_inner(err, epoch, bi // cfg.batch_size, int(idx)) from err
                    total_obj += obj
                    grad += g
                grad /= batch.size
            if cfg.weight_decay:
                grad += cfg.weight_decay * params
            params = params - lr * grad
            if not np.all(np.isfinite(params)):
                raise NumericalError(f"non-finite parameters at epoch {epoch}")
        objectives.append(total_obj / n)
        wall_times.append(time.perf_counter() - t0)

    return TrainReport(params, objectives, wall_times, cfg.seed, cfg)


def _rls_fn(coeffs) -> Fn:
    c0, c1, c2 = coeffs

    def vag(u):
        xi = float(u[0])
        return c0 + (c1 + c2 * xi) * xi, np.array([c1 + 2.0 * c2 * xi])

    return Fn(lambda u: vag(u)[0], lambda u: vag(u)[1], vag)


def _rls_sample_step(problem, params, xi, cfg, kspec, cspec, idx, coeffs):
    if cfg.method == "erm":
        c0, c1, c2 = coeffs
        v = c0 + (c1 + c2 * xi) * xi
        _, gt, _ = rls_loss_grads(params, xi, problem.A0, problem.A1, problem.b)
        return v, gt
    fn = _rls_fn(coeffs)
    x = np.array([xi])
    if cfg.method == "arks":
        res = k_transform(fn, x, kspec, _inner_cfg(cfg, idx))
        scale = kernel(kspec, res.u_star, x) if cfg.scale_grad_by_kernel else 1.0
    else:
        res = c_transform(fn, x, cfg.wrm_y, cspec, _inner_cfg(cfg, idx))
        scale = 1.0
    _, gt, _ = rls_loss_grads(params, float(res.u_star[0]), problem.A0, problem.A1, problem.b)
    return res.value, scale * gt


def _rls_worst_grid(problem, params, grid):
    base = problem.A0 @ params - problem.b
    drift = problem.A1 @ params
    R = base[None, :] + grid[:, None] * drift[None, :]
    losses = (R * R).sum(axis=1)
    w = int(np.argmax(losses))
    _, gt, _ = rls_loss_grads(params, float(grid[w]), problem.A0, problem.A1, problem.b)
    return float(losses[w]), gt


def rls_objective(problem: RlsProblem, params, xis) -> float:
    """Mean rls loss of theta over a xi sample."""
    xis = np.asarray(xis, dtype=np.float64).ravel()
    base = problem.A0 @ np.asarray(params, dtype=np.float64) - problem.b
    drift = problem.A1 @ np.asarray(params, dtype=np.float64)
    R = base[None, :] + xis[:, None] * drift[None, :]
    return float((R * R).sum(axis=1).mean())


def rls_worst_objective(problem: RlsProblem, params, lo=-1.0, hi=1.0, step=1e-3) -> float:
    """Worst rls loss of theta over a dense xi grid."""
    grid = grid_1d(lo, hi, step)
    v, _ = _rls_worst_grid(problem, np.asarray(params, dtype=np.float64), grid)
    return v
