"""Invariant suites shared by the ``selftest`` CLI command and the
acceptance tests.

Every check returns (ok, detail); counts are parameters so the CLI can run
reduced versions while the acceptance suite runs the full sizes.  Expected
values come from independent routes: finite differences, dense grid
search, or closed forms -- never from the code path being checked.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DivergenceError
from .kernels import CostSpec, KernelSpec, gaussian, gram, kernel, kernel_and_grad
from .models import Fn, LossKind, ModelLoss, ModelSpec, Sample, init_params
from .robusteval import AttackConfig, attack, certificate_check
from .surrogates import (
    InnerSolverConfig,
    brute_force_k_transform,
    c_transform,
    grid_1d,
    k_transform,
    k_transform_log,
    kernel_distance_envelope,
    pasch_hausdorff,
    sigma_star,
    worst_case_sup,
)
from .tape import Tape, finite_diff_grad

EPS = 1e-3  # positivity offset of the canonical instances


# -- random tape generator ----------------------------------------------

_KINKED = (10, 11, 14)  # OP_ELU, OP_RELU, OP_L1NORM


def _random_chain_tape(rng):
    t = Tape()
    dim = int(rng.integers(2, 6))
    names = [f"v{i}" for i in range(int(rng.integers(1, 4)))]
    nodes = [t.leaf(n, (dim,)) for n in names]
    for _ in range(int(rng.integers(3, 9))):
        kind = rng.choice(
            ["add", "mul", "neg", "elu", "relu", "scale", "exp", "logmix", "matmul"]
        )
        a = nodes[int(rng.integers(len(nodes)))]
        if kind == "add":
            nodes.append(t.add(a, nodes[int(rng.integers(len(nodes)))]))
        elif kind == "mul":
            nodes.append(t.mul(a, nodes[int(rng.integers(len(nodes)))]))
        elif kind == "neg":
            nodes.append(t.neg(a))
        elif kind == "elu":
            nodes.append(t.elu(a))
        elif kind == "relu":
            nodes.append(t.relu(a))
        elif kind == "scale":
            nodes.append(t.scale(a, float(rng.uniform(0.3, 1.5)) * (1 if rng.random() < 0.5 else -1)))
        elif kind == "exp":
            nodes.append(t.exp(t.scale(a, 0.3)))
        elif kind == "logmix":
            nodes.append(t.log(t.add(t.exp(t.scale(a, 0.25)), t.const(0.5))))
        else:
            M = rng.normal(size=(dim, dim)) / np.sqrt(dim)
            nodes.append(t.matmul(t.const(M), a))
    reducers = [t.sum, t.mean, t.sqnorm, t.l1norm]
    parts = [reducers[int(rng.integers(4))](nodes[int(rng.integers(len(nodes)))])
             for _ in range(2)]
    t.seal(t.add(parts[0], parts[1]))
    bindings = {n: rng.uniform(-2.0, 2.0, size=dim) for n in names}
    return t, bindings


def _random_mlp_tape(rng):
    classify = rng.random() < 0.5
    d = int(rng.integers(2, 5))
    hidden = tuple(int(rng.integers(3, 8)) for _ in range(int(rng.integers(1, 3))))
    out_dim = int(rng.integers(2, 4)) if classify else 1
    spec = ModelSpec("mlp", d, out_dim, hidden, str(rng.choice(["elu", "relu"])))
    kind = LossKind("cross-entropy" if classify else "least-squares", 1e-3)
    ml = ModelLoss(spec, kind)
    params = init_params(spec, int(rng.integers(1 << 30))) + 0.1 * rng.normal(
        size=sum(o * i + o for o, i in spec.layer_dims)
    )
    y = int(rng.integers(out_dim)) if classify else float(rng.normal())
    sample = Sample(rng.uniform(-2, 2, size=d), y)
    tape, bindings = ml._tape_and_bindings(params, sample)
    return tape, {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}


def _kink_safe(tape, bindings, margin=0.03) -> bool:
    tape.forward(bindings)
    for i, (op, ia, _ib, _x, _f) in enumerate(tape._ops):
        if op in _KINKED and np.abs(tape._values[ia]).min() < margin:
            return False
    return True


def check_gradients(n_tapes: int = 100, seed: int = 0):
    """Reverse-mode gradients against central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_tapes):
        for _ in range(60):
            maker = _random_mlp_tape if case % 3 == 2 else _random_chain_tape
            tape, bindings = maker(rng)
            if _kink_safe(tape, bindings):
                break
        else:
            return False, f"could not build a kink-safe tape for case {case}"
        _, grads = tape.value_and_grad(bindings, tape.leaves)
        for name in tape.leaves:
            point = bindings[name]

            def f(v, _n=name):
                b = dict(bindings)
                b[_n] = v
                return tape.forward(b)

            fd = finite_diff_grad(f, point, 1e-5)
            denom = max(np.abs(fd).max(), np.abs(grads[name]).max(), 1e-8)
            worst = max(worst, float(np.abs(grads[name] - fd).max() / denom))
    ok = worst < 1e-4
    return ok, f"{n_tapes} tapes, worst relative gradient error {worst:.3g}"


# -- random loss families ------------------------------------------------


def _quad_loss(a, c, d):
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))

    def value(u):
        r = np.atleast_1d(u) - c
        return d + a * float(r @ r)

    return Fn(
        value,
        lambda u: 2.0 * a * (np.atleast_1d(u) - c),
        value_batch=lambda U: d + a * ((U - c) ** 2).sum(axis=1),
    )


def _quartic_loss(a, b, c, d):
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))

    def value(u):
        s = float((np.atleast_1d(u) - c) @ (np.atleast_1d(u) - c))
        return d + a * s * s + b * s

    def grad(u):
        r = np.atleast_1d(u) - c
        s = float(r @ r)
        return (4.0 * a * s + 2.0 * b) * r

    def batch(U):
        s = ((U - c) ** 2).sum(axis=1)
        return d + a * s * s + b * s

    return Fn(value, grad, value_batch=batch)


def _bump_loss(a, c, d):
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))

    def value(u):
        r = np.atleast_1d(u) - c
        return d + a * math.exp(-0.5 * float(r @ r))

    def grad(u):
        r = np.atleast_1d(u) - c
        return -a * math.exp(-0.5 * float(r @ r)) * r

    return Fn(value, grad,
              value_batch=lambda U: d + a * np.exp(-0.5 * ((U - c) ** 2).sum(axis=1)))


def _abs_loss(a, c, d):
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    return Fn(
        lambda u: d + a * float(np.abs(np.atleast_1d(u) - c).sum()),
        lambda u: a * np.sign(np.atleast_1d(u) - c),
        value_batch=lambda U: d + a * np.abs(U - c).sum(axis=1),
    )


def check_majorant(n_configs: int = 200, seed: int = 0):
    """Every surrogate dominates the loss at the anchor point."""
    rng = np.random.default_rng(seed)
    families = ("quad", "quartic", "bump", "abs")
    costs = ("sq-l2-half", "sq-l2", "l2", "l1")
    checked = 0
    grid = grid_1d(-6.0, 6.0, 1e-3)
    anchor_lo = int(np.searchsorted(grid, -2.0))
    anchor_hi = int(np.searchsorted(grid, 2.0))
    for case in range(n_configs):
        dim = 1 if case % 2 == 0 else 2
        fam = families[case % 4]
        a = float(rng.uniform(0.1, 2.0))
        d = float(rng.uniform(0.05, 3.0))
        c = rng.uniform(-1.5, 1.5, size=dim)
        if fam == "quad":
            fn = _quad_loss(a, c, d)
        elif fam == "quartic":
            fn = _quartic_loss(a, float(rng.uniform(0.1, 1.0)), c, d)
        elif fam == "bump":
            fn = _bump_loss(a, c, d)
        else:
            fn = _abs_loss(a, c, d)
        if dim == 1:
            # anchor on the sampled grid so the Pasch-Hausdorff envelope
            # (defined only through grid samples) can see the anchor point
            x = np.array([grid[int(rng.integers(anchor_lo, anchor_hi + 1))]])
        else:
            x = rng.uniform(-2.0, 2.0, size=dim)
        sigma = float(rng.uniform(0.05, 5.0))
        kspec = KernelSpec(CostSpec(costs[int(rng.integers(4))]), sigma)
        cfg = InnerSolverConfig(alpha=float(rng.uniform(0.01, 0.3)),
                                steps=15, seed=case)
        lx = fn.value(x)
        vals = {"k_transform": k_transform(fn, x, kspec, cfg).value}
        if fam == "bump":
            y = float(rng.uniform(0.1, 5.0))
            vals["c_transform"] = c_transform(fn, x, y, kspec.cost, cfg).value
        elif fam == "quad":
            y = 2.0 * a * float(rng.uniform(1.2, 3.0))
            vals["c_transform"] = c_transform(fn, x, y, CostSpec("sq-l2"), cfg).value
        boxed = InnerSolverConfig(alpha=cfg.alpha, steps=15, restarts=2,
                                  box=(-4.0, 4.0), seed=case)
        vals["kernel_distance_envelope"] = kernel_distance_envelope(
            fn, x, float(rng.uniform(0.1, 10.0)), kspec, boxed).value
        if dim == 1:
            ls = fn.value_batch(grid[:, None])
            slope = float(np.abs(np.diff(ls) / np.diff(grid)).max())
            vals["pasch_hausdorff"] = pasch_hausdorff(grid, ls, float(x[0]), slope * 1.2 + 0.1)
        for name, v in vals.items():
            checked += 1
            if not v >= lx - 1e-12:
                return False, f"case {case}: {name} value {v} < loss {lx} at the anchor"
    return True, f"{checked} surrogate evaluations all dominate the anchored loss"


# -- canonical sandwich instance -----------------------------------------


def sandwich_values(sigma: float = 1.0, eps: float = EPS):
    """(ERM mean, ARKS grid-oracle objective, RO value) on the canonical
    instance: data {-1, 0, 1}, loss u^2 + eps, box [-2, 2], Gaussian kernel."""
    pts = (-1.0, 0.0, 1.0)
    us = grid_1d(-2.0, 2.0, 1e-4)
    ls = us * us + eps
    kspec = gaussian(sigma)
    arks = float(np.mean([brute_force_k_transform(us, ls, [x], kspec) for x in pts]))
    erm = float(np.mean([x * x + eps for x in pts]))
    ro = float(ls.max())
    return erm, arks, ro


def check_sandwich():
    """ERM <= ARKS <= RO with strict margins, plus ascent-vs-oracle agreement."""
    erm, arks, ro = sandwich_values()
    if not (erm + 0.05 < arks < ro - 0.05):
        return False, f"ordering failed: erm={erm:.6f} arks={arks:.6f} ro={ro:.6f}"
    quad = _quad_loss(1.0, [0.0], EPS)
    cfg = InnerSolverConfig(alpha=0.25, steps=300, restarts=6, restart_radius=1.0,
                            box=(-2.0, 2.0), seed=7, tol=0.0)
    ascent = float(np.mean(
        [k_transform(quad, [x], gaussian(1.0), cfg).value for x in (-1.0, 0.0, 1.0)]
    ))
    if abs(ascent - arks) > 1e-4:
        return False, f"ascent objective {ascent:.8f} vs grid oracle {arks:.8f}"
    return True, (
        f"erm={erm:.6f} < arks={arks:.6f} < ro={ro:.6f}; ascent agrees to "
        f"{abs(ascent - arks):.2e}"
    )


def check_sigma_limits(sigmas=(1e-6, 1e-3, 1.0, 1e3, 1e8)):
    """Objective sweeps monotonically from the ERM mean to the RO value."""
    erm, _, ro = sandwich_values()
    objs = [sandwich_values(sigma=s)[1] for s in sigmas]
    if any(b < a - 1e-12 for a, b in zip(objs, objs[1:])):
        return False, f"objective not monotone in sigma: {objs}"
    if abs(objs[0] - erm) > 1e-3:
        return False, f"sigma->0 endpoint {objs[0]} vs ERM {erm}"
    if abs(objs[-1] - ro) > 1e-3:
        return False, f"sigma->inf endpoint {objs[-1]} vs RO {ro}"
    return True, f"objectives {['%.6f' % o for o in objs]} climb from ERM to RO"


def check_log_path(n_configs: int = 100, seed: int = 0):
    """Direct-product and log-space ascent agree on positive smooth losses."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for case in range(n_configs):
        a = float(rng.uniform(0.3, 1.5))
        d = float(rng.uniform(0.5, 2.0))
        c = float(rng.uniform(-1.0, 1.0))
        x = np.array([rng.uniform(-1.5, 1.5)])
        sigma = float(rng.uniform(0.1, 1.0)) * 0.8 * d / (2.0 * a)
        fn = _quad_loss(a, [c], d)
        kspec = gaussian(sigma)
        cfg = InnerSolverConfig(alpha=0.05 * sigma, steps=1200, seed=case, tol=0.0)
        v_direct = k_transform(fn, x, kspec,
                               InnerSolverConfig(alpha=cfg.alpha, steps=cfg.steps,
                                                 seed=case, tol=0.0, log_scale=False)).value
        v_log = k_transform_log(fn, x, kspec, cfg).value
        rel = abs(v_direct - v_log) / max(abs(v_log), 1e-12)
        worst = max(worst, rel)
    ok = worst < 1e-8
    return ok, f"{n_configs} configs, worst relative path disagreement {worst:.3g}"


def check_moreau():
    """Closed-form Moreau envelope, divergence detection, and the y->inf pin."""
    sq = _quad_loss(1.0, [0.0], 0.0)
    cfg = InnerSolverConfig(alpha=0.25, steps=200, tol=0.0)
    res = c_transform(sq, [1.0], 2.0, CostSpec("sq-l2"), cfg)
    if abs(res.value - 2.0) > 1e-6 or abs(float(res.u_star[0]) - 2.0) > 1e-4:
        return False, f"closed form failed: value={res.value}, u*={res.u_star}"
    try:
        c_transform(sq, [1.0], 1.0, CostSpec("sq-l2"), cfg)
        return False, "y=1 unbounded envelope did not raise DivergenceError"
    except DivergenceError:
        pass
    pin = c_transform(sq, [1.5], 1e6, CostSpec("sq-l2"), cfg)
    if abs(pin.value - sq.value([1.5])) > 1e-5:
        return False, f"y=1e6 did not pin the envelope to the loss: {pin.value}"
    return True, "value 2.0 at u*=2.0; y=1 diverges; y=1e6 pins to l(x)"


def check_sigma_star():
    v1 = sigma_star(1.0, 1.0, 2.0)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    v2 = sigma_star(1.0, 2.0, 2.0)
    if v1 != 1.0:
        return False, f"sigma_star(1,1,2) = {v1!r}, expected exactly 1.0"
    if abs(v2 - golden) > 1e-12:
        return False, f"sigma_star(1,2,2) = {v2!r}, expected {golden!r}"
    try:
        sigma_star(1.0, 1.0, -1.0)
        return False, "concave curvature did not raise DomainError"
    except Exception:
        pass
    return True, f"1.0 exact; golden ratio to {abs(v2 - golden):.1e}; concave rejected"


def check_attack_constraints(n_samples: int = 10_000, seed: int = 0):
    """Attack outputs always satisfy the budget and the clip box."""
    rng = np.random.default_rng(seed)
    spec = ModelSpec("logistic", 4, 2)
    ml = ModelLoss(spec, LossKind("cross-entropy"))
    params = init_params(spec, seed)
    deltas = (0.0, 0.05, 0.1, 0.2, 0.3)
    violations = 0
    for i in range(n_samples):
        clipped = i % 2 == 0
        x = rng.uniform(0.0, 1.0, size=4) if clipped else rng.normal(size=4)
        s = Sample(x, int(rng.integers(2)))
        cfg = AttackConfig(
            kind="pgd" if i % 3 else "fgsm",
            delta=deltas[i % len(deltas)],
            steps=15, alpha=0.03,
            clip=(0.0, 1.0) if clipped else None,
        )
        adv = attack(ml, params, s, cfg)
        if np.max(np.abs(adv.x - s.x), initial=0.0) > cfg.delta + 1e-12:
            violations += 1
        elif clipped and (np.any(adv.x < 0.0) or np.any(adv.x > 1.0)):
            violations += 1
    return violations == 0, f"{n_samples} attacks, {violations} constraint violations"


class _FixedLossModel:
    """Per-sample losses that ignore the parameter vector (generic instances)."""

    def __init__(self, fn_factory):
        self._factory = fn_factory

    def x_fn(self, params, sample):
        return self._factory(sample)


def check_certificate_duality(n_scenarios: int = 100, seed: int = 0):
    """The certificate bound holds for every explicit shift when the inner
    suprema come from the grid oracle."""
    rng = np.random.default_rng(seed)
    passed = 0
    for case in range(n_scenarios):
        a = float(rng.uniform(0.2, 2.0))
        c = float(rng.uniform(-1.0, 1.0))
        d = float(rng.uniform(0.1, 2.0))
        if case % 3 == 0:
            fn = _quartic_loss(a, float(rng.uniform(0.1, 1.0)), [c], d)
        else:
            fn = _quad_loss(a, [c], d)
        model = _FixedLossModel(lambda s, f=fn: f)
        n = int(rng.integers(3, 9))
        pts = [Sample(rng.uniform(-2.0, 2.0, size=1), 0.0) for _ in range(n)]
        shifts = [rng.uniform(-0.5, 0.5, size=1) for _ in range(n)]
        kspec = gaussian(float(rng.uniform(0.05, 5.0)))
        rec = certificate_check(model, None, pts, kspec, shifts, grid=(-8.0, 8.0, 1e-3))
        if rec.passed_oracle:
            passed += 1
    return passed == n_scenarios, f"{passed}/{n_scenarios} shift scenarios certified"


def check_kernel_properties(seed: int = 0):
    """Symmetry, monotonicity in sigma, gram PSD, and gradient correctness."""
    rng = np.random.default_rng(seed)
    for fam in ("sq-l2-half", "sq-l2", "l2", "l1"):
        for _ in range(20):
            u, x = rng.normal(size=3), rng.normal(size=3)
            spec = KernelSpec(CostSpec(fam), float(rng.uniform(0.1, 5.0)))
            if abs(kernel(spec, u, x) - kernel(spec, x, u)) > 1e-15:
                return False, f"{fam}: kernel asymmetry"
            lo = KernelSpec(CostSpec(fam), spec.sigma)
            hi = KernelSpec(CostSpec(fam), spec.sigma * 3.0)
            if not kernel(lo, u, x) < kernel(hi, u, x):
                return False, f"{fam}: not monotone in sigma"
    for fam in ("sq-l2-half", "l2"):
        X = rng.normal(size=(12, 3))
        K = gram(KernelSpec(CostSpec(fam), 1.0), X)
        if np.linalg.eigvalsh(K).min() < -1e-8:
            return False, f"{fam}: gram matrix not PSD"
    for fam in ("sq-l2-half", "sq-l2"):
        for _ in range(10):
            u, x = rng.normal(size=2), rng.normal(size=2)
            spec = KernelSpec(CostSpec(fam), float(rng.uniform(0.2, 3.0)))
            _, g = kernel_and_grad(spec, u, x)
            fd = finite_diff_grad(lambda v: kernel(spec, v, x), u)
            if np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-10) > 1e-4:
                return False, f"{fam}: kernel gradient mismatch"
    return True, "symmetry, sigma-monotonicity, PSD grams, gradients all hold"


def check_determinism():
    """Identical (data, config, seed) runs produce bit-identical reports."""
    from .data import two_moons
    from .trainers import TrainConfig, train

    data = two_moons(24, 0.15, seed=3)
    ml = ModelLoss(ModelSpec("mlp", 2, 2, (6,)), LossKind("cross-entropy"))
    cfg = TrainConfig("arks", epochs=2, batch_size=8, lr=0.1, seed=5, sigma=0.5,
                      inner=InnerSolverConfig(alpha=0.1, steps=10, restarts=1))
    r1 = train(ml, data, cfg)
    r2 = train(ml, data, cfg)
    if r1.objectives != r2.objectives:
        return False, "objective series differ between identical runs"
    if not np.array_equal(r1.params, r2.params):
        return False, "final parameters differ between identical runs"
    return True, "objectives and parameters bit-identical across reruns"


SUITES = {
    "gradients": check_gradients,
    "majorant": check_majorant,
    "sandwich": check_sandwich,
    "sigma-limits": check_sigma_limits,
    "log-path": check_log_path,
    "moreau": check_moreau,
    "sigma-star": check_sigma_star,
    "attack-constraints": check_attack_constraints,
    "certificate-duality": check_certificate_duality,
    "kernel-properties": check_kernel_properties,
    "determinism": check_determinism,
}

_FAST_SIZES = {
    "gradients": {"n_tapes": 24},
    "majorant": {"n_configs": 60},
    "log-path": {"n_configs": 20},
    "attack-constraints": {"n_samples": 600},
    "certificate-duality": {"n_scenarios": 25},
}


def run_all(fast: bool = True):
    """Run every suite; returns [(name, ok, detail)]."""
    results = []
    for name, fn in SUITES.items():
        kwargs = _FAST_SIZES.get(name, {}) if fast else {}
        try:
            ok, detail = fn(**kwargs)
        except Exception as err:  # a crashed suite is a failed suite
            ok, detail = False, f"raised {type(err).__name__}: {err}"
        results.append((name, ok, detail))
    return results
