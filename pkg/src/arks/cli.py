"""Experiment runner: config parsing, dispatch, result emission.

Configs are YAML (or JSON) with strict schemas -- unknown keys are hard
errors.  Every run writes a canonical ``config-echo.json`` plus one
directory per seed holding ``train.csv`` / ``sweep.csv`` /
``certificate.json`` / ``params.json`` as applicable.  All randomness
flows from the declared seeds, so identical configs reproduce identical
bytes.

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .data import (
    linear_regression_data,
    load_csv,
    make_rls_problem,
    sample_xis,
    standardize,
    two_moons,
)
from .errors import (
    ArksError,
    ConfigError,
    DataError,
    DivergenceError,
    DomainError,
    NumericalError,
)
from .kernels import COST_FAMILIES, CostSpec, KernelSpec, cost
from .models import LossKind, ModelLoss, ModelSpec, Sample, init_params
from .robusteval import (
    AttackConfig,
    SweepResult,
    SweepRow,
    attack_set,
    certificate,
    certificate_check,
    evaluate,
    sweep_shift,
)
from .surrogates import InnerSolverConfig, _mix_seed, k_transform
from .trainers import TrainConfig, rls_objective, train, train_rls

KINDS = ("train", "attack-sweep", "shift-sweep", "certify", "rls", "selftest")
COMMAND_KINDS = {
    "train": ("train",),
    "sweep": ("attack-sweep", "shift-sweep"),
    "certify": ("certify",),
    "rls": ("rls",),
    "selftest": ("selftest",),
}


# -- config validation ----------------------------------------------------


def _check_keys(d, path, required=(), optional=()):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(d).__name__}")
    required, optional = set(required), set(optional)
    unknown = sorted(set(d) - required - optional)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    missing = sorted(required - set(d))
    if missing:
        raise ConfigError(f"{path}: missing required keys {missing}")


def _model_spec(d) -> ModelSpec:
    _check_keys(d, "model", required=("family", "input_dim"),
                optional=("output_dim", "hidden", "activation"))
    return ModelSpec(
        family=d["family"], input_dim=int(d["input_dim"]),
        output_dim=int(d.get("output_dim", 1)),
        hidden=tuple(int(h) for h in d.get("hidden", ())),
        activation=d.get("activation", "elu"),
    )


def _loss_kind(d) -> LossKind:
    _check_keys(d, "loss", required=("kind",), optional=("eps_pos",))
    return LossKind(d["kind"], float(d.get("eps_pos", 1e-3)))


def _inner_cfg(d, seed: int) -> InnerSolverConfig:
    _check_keys(d, "inner", required=("alpha",),
                optional=("steps", "restarts", "restart_radius", "box", "log_scale",
                          "tol", "grid_step", "ceiling"))
    box = d.get("box")
    if box is not None:
        box = tuple(box) if np.asarray(box).ndim == 1 else [tuple(r) for r in box]
    return InnerSolverConfig(
        alpha=float(d["alpha"]), steps=int(d.get("steps", 15)),
        restarts=int(d.get("restarts", 0)),
        restart_radius=float(d.get("restart_radius", 1.0)),
        box=box, log_scale=d.get("log_scale"), seed=seed,
        tol=float(d.get("tol", 1e-9)), grid_step=float(d.get("grid_step", 1e-4)),
        ceiling=float(d.get("ceiling", 1e12)),
    )


_TRAIN_KEYS = ("method", "epochs", "batch_size", "lr", "label", "sigma", "cost",
               "wrm_y", "pgd_delta", "pgd_clip", "ro_domain", "inner",
               "lr_decay_epochs", "lr_decay_factor", "weight_decay", "swa",
               "swa_start", "scale_grad_by_kernel")


def _train_cfg(d, seed: int) -> tuple[str, TrainConfig]:
    _check_keys(d, "train entry", required=("method", "epochs", "batch_size", "lr"),
                optional=[k for k in _TRAIN_KEYS if k not in
                          ("method", "epochs", "batch_size", "lr")])
    inner = _inner_cfg(d["inner"], seed) if "inner" in d else None
    ro_domain = d.get("ro_domain")
    if ro_domain is not None:
        arr = np.asarray(ro_domain, dtype=np.float64)
        ro_domain = tuple(arr) if arr.ndim == 1 else [tuple(r) for r in arr]
    cfg = TrainConfig(
        method=d["method"], epochs=int(d["epochs"]), batch_size=int(d["batch_size"]),
        lr=float(d["lr"]), seed=seed,
        lr_decay_epochs=tuple(int(e) for e in d.get("lr_decay_epochs", ())),
        lr_decay_factor=float(d.get("lr_decay_factor", 0.1)),
        weight_decay=float(d.get("weight_decay", 0.0)),
        sigma=None if d.get("sigma") is None else float(d["sigma"]),
        cost=d.get("cost", "sq-l2-half"),
        wrm_y=None if d.get("wrm_y") is None else float(d["wrm_y"]),
        pgd_delta=None if d.get("pgd_delta") is None else float(d["pgd_delta"]),
        pgd_clip=None if d.get("pgd_clip") is None else tuple(d["pgd_clip"]),
        ro_domain=ro_domain, inner=inner,
        swa=bool(d.get("swa", False)), swa_start=int(d.get("swa_start", 0)),
        scale_grad_by_kernel=bool(d.get("scale_grad_by_kernel", False)),
    )
    label = d.get("label")
    if label is None:
        label = cfg.method
        if cfg.method == "arks":
            label = f"arks-s{cfg.sigma:g}"
        elif cfg.method == "wrm":
            label = f"wrm-y{cfg.wrm_y:g}"
    return label, cfg


def _train_entries(raw, seed: int):
    entries = raw if isinstance(raw, list) else [raw]
    out = []
    for d in entries:
        out.append(_train_cfg(d, seed))
    labels = [l for l, _ in out]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate train labels {labels}; set explicit 'label' keys")
    return out


def _attack_cfg(d) -> tuple[AttackConfig, list[float], str]:
    _check_keys(d, "attack", required=("deltas",),
                optional=("kind", "mode", "surrogate", "steps", "alpha", "clip", "seed"))
    cfg = AttackConfig(
        kind=d.get("kind", "pgd"), delta=0.0, steps=int(d.get("steps", 15)),
        alpha=float(d.get("alpha", 0.03)),
        clip=None if d.get("clip") is None else tuple(d["clip"]),
        mode=d.get("mode", "black-box"), seed=int(d.get("seed", 0)),
    )
    return cfg, [float(x) for x in d["deltas"]], d.get("surrogate", "erm")


# -- dataset construction --------------------------------------------------


def _dataset(d, loss_kind: LossKind, run_seed: int):
    _check_keys(d, "dataset", optional=("synthetic", "csv", "standardize"))
    if ("synthetic" in d) == ("csv" in d):
        raise ConfigError("dataset: configure exactly one of 'synthetic' or 'csv'")
    classification = loss_kind.kind == "cross-entropy"
    if "csv" in d:
        spec = d["csv"]
        _check_keys(spec, "dataset.csv", required=("train",), optional=("test",))
        for key in ("train", "test"):
            if key in spec and not Path(spec[key]).exists():
                raise ConfigError(f"dataset.csv.{key}: no such file {spec[key]!r}")
        train_set = load_csv(spec["train"], classification)
        test_set = load_csv(spec["test"], classification) if "test" in spec else []
    else:
        spec = d["synthetic"]
        _check_keys(spec, "dataset.synthetic", required=("kind", "n_train"),
                    optional=("n_test", "noise", "dim", "seed"))
        base = _mix_seed(int(spec.get("seed", 0)), run_seed)
        n_train = int(spec["n_train"])
        n_test = int(spec.get("n_test", 0))
        noise = float(spec.get("noise", 0.1))
        if spec["kind"] == "two-moons":
            train_set = two_moons(n_train, noise, _mix_seed(base, 1))
            test_set = two_moons(n_test, noise, _mix_seed(base, 2)) if n_test else []
        elif spec["kind"] == "linear-regression":
            dim = int(spec.get("dim", 3))
            train_set = linear_regression_data(n_train, dim, noise, _mix_seed(base, 1))
            test_set = linear_regression_data(n_test, dim, noise, _mix_seed(base, 2)) \
                if n_test else []
        else:
            raise ConfigError(f"dataset.synthetic.kind: unknown kind {spec['kind']!r}")
    if d.get("standardize", False):
        if test_set:
            train_set, test_set, _ = standardize(train_set, test_set)
        else:
            train_set, _ = standardize(train_set)
    return train_set, test_set


# -- output helpers --------------------------------------------------------


def _write_json(path: Path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_train_csv(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "epoch", "objective"])
        for label, seed, epoch, obj in rows:
            w.writerow([label, seed, epoch, repr(obj)])


def _seed_dir(out: Path, seed: int) -> Path:
    d = out / f"seed-{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- experiment kinds ------------------------------------------------------


def _run_train_kind(config, out: Path, seeds):
    model_spec = _model_spec(config["model"])
    loss_kind = _loss_kind(config["loss"])
    for seed in seeds:
        entries = _train_entries(config["train"], seed)
        train_set, _ = _dataset(config["dataset"], loss_kind, seed)
        sdir = _seed_dir(out, seed)
        rows, params_payload = [], {}
        for label, cfg in entries:
            ml = ModelLoss(model_spec, loss_kind)
            report = train(ml, train_set, cfg)
            rows.extend((label, seed, e, o) for e, o in enumerate(report.objectives))
            params_payload[label] = [float(v) for v in report.params]
            if report.swa_params is not None:
                params_payload[f"{label}-swa"] = [float(v) for v in report.swa_params]
        _write_train_csv(sdir / "train.csv", rows)
        _write_json(sdir / "params.json", params_payload)


def _run_attack_sweep(config, out: Path, seeds):
    model_spec = _model_spec(config["model"])
    loss_kind = _loss_kind(config["loss"])
    acfg, deltas, surrogate_label = _attack_cfg(config["attack"])
    for seed in seeds:
        entries = _train_entries(config["train"], seed)
        labels = [l for l, _ in entries]
        if acfg.mode == "black-box" and surrogate_label not in labels:
            raise ConfigError(
                f"attack.surrogate {surrogate_label!r} is not among trained labels {labels}"
            )
        train_set, test_set = _dataset(config["dataset"], loss_kind, seed)
        if not test_set:
            raise ConfigError("attack-sweep needs a test split (n_test or csv.test)")
        sdir = _seed_dir(out, seed)
        rows, params_payload, trained = [], {}, {}
        for label, cfg in entries:
            ml = ModelLoss(model_spec, loss_kind)
            report = train(ml, train_set, cfg)
            trained[label] = (ml, report.params)
            rows.extend((label, seed, e, o) for e, o in enumerate(report.objectives))
            params_payload[label] = [float(v) for v in report.params]
        result = SweepResult()
        for delta in deltas:
            dcfg = AttackConfig(kind=acfg.kind, delta=delta, steps=acfg.steps,
                                alpha=acfg.alpha, clip=acfg.clip, mode=acfg.mode,
                                seed=_mix_seed(acfg.seed, seed))
            if acfg.mode == "black-box":
                s_ml, s_params = trained[surrogate_label]
                perturbed = {None: test_set if delta == 0
                             else attack_set(s_ml, s_params, test_set, dcfg)}
            else:
                perturbed = {
                    label: test_set if delta == 0
                    else attack_set(ml, params, test_set, dcfg)
                    for label, (ml, params) in trained.items()
                }
            for label, (ml, params) in trained.items():
                data = perturbed[None] if acfg.mode == "black-box" else perturbed[label]
                for metric, value in evaluate(ml, params, data).items():
                    rows_n = len(data)
                    result.rows.append(SweepRow(label, acfg.kind, acfg.mode, seed,
                                                delta, metric, value, rows_n))
        _write_train_csv(sdir / "train.csv", rows)
        _write_json(sdir / "params.json", params_payload)
        result.to_csv(sdir / "sweep.csv")


def _run_shift_sweep(config, out: Path, seeds):
    model_spec = _model_spec(config["model"])
    loss_kind = _loss_kind(config["loss"])
    sh = config["shift"]
    _check_keys(sh, "shift", required=("kind", "deltas"))
    for seed in seeds:
        entries = _train_entries(config["train"], seed)
        train_set, test_set = _dataset(config["dataset"], loss_kind, seed)
        if not test_set:
            raise ConfigError("shift-sweep needs a test split (n_test or csv.test)")
        sdir = _seed_dir(out, seed)
        rows, params_payload = [], {}
        result = SweepResult()
        for label, cfg in entries:
            ml = ModelLoss(model_spec, loss_kind)
            report = train(ml, train_set, cfg)
            rows.extend((label, seed, e, o) for e, o in enumerate(report.objectives))
            params_payload[label] = [float(v) for v in report.params]
            part = sweep_shift(ml, report.params, test_set, sh["kind"],
                               [float(x) for x in sh["deltas"]],
                               seed=_mix_seed(seed, 0x5617), label=label)
            result.rows.extend(part.rows)
        _write_train_csv(sdir / "train.csv", rows)
        _write_json(sdir / "params.json", params_payload)
        result.to_csv(sdir / "sweep.csv")


def _run_certify(config, out: Path, seeds):
    model_spec = _model_spec(config["model"])
    loss_kind = _loss_kind(config["loss"])
    cert = config["certify"]
    _check_keys(cert, "certify", required=("sigma", "rho", "inner"),
                optional=("cost", "check_displacement"))
    sigma = float(cert["sigma"])
    rho = float(cert["rho"])
    kspec = KernelSpec(CostSpec(cert.get("cost", "sq-l2-half")), sigma)
    for seed in seeds:
        entries = _train_entries(config["train"], seed)
        if len(entries) != 1:
            raise ConfigError("certify expects exactly one train entry")
        label, cfg = entries[0]
        train_set, _ = _dataset(config["dataset"], loss_kind, seed)
        ml = ModelLoss(model_spec, loss_kind)
        report = train(ml, train_set, cfg)
        inner = _inner_cfg(cert["inner"], seed)
        values = [
            k_transform(ml.x_fn(report.params, s), s.x, kspec, inner.for_sample(i)).value
            for i, s in enumerate(train_set)
        ]
        rep = certificate(float(np.mean(values)), rho, sigma, loss_kind.eps_pos)
        payload = {"method": label, "seed": seed, "certificate": rep.to_dict()}
        disp = cert.get("check_displacement")
        if disp is not None:
            if model_spec.input_dim != 1:
                raise ConfigError("check_displacement needs 1-d features (grid oracle)")
            shifts = [np.array([float(disp)]) for _ in train_set]
            rec = certificate_check(ml, report.params, train_set, kspec, shifts,
                                    cfg=inner)
            payload["check"] = rec.to_dict()
        sdir = _seed_dir(out, seed)
        _write_json(sdir / "certificate.json", payload)


def _run_rls(config, out: Path, seeds):
    spec = config["rls"]
    _check_keys(spec, "rls", required=("rows", "cols", "instance_seed", "n_train",
                                       "methods"),
                optional=("shift_deltas", "drift_scale"))
    problem = make_rls_problem(int(spec["rows"]), int(spec["cols"]),
                               int(spec["instance_seed"]),
                               float(spec.get("drift_scale", 0.5)))
    deltas = [float(x) for x in spec.get("shift_deltas", (0.0,))]
    for seed in seeds:
        xis = sample_xis(int(spec["n_train"]), _mix_seed(seed, 0xDA7A))
        entries = _train_entries(spec["methods"], seed)
        sdir = _seed_dir(out, seed)
        rows, params_payload = [], {}
        result = SweepResult()
        for label, cfg in entries:
            report = train_rls(problem, xis, cfg)
            rows.extend((label, seed, e, o) for e, o in enumerate(report.objectives))
            params_payload[label] = [float(v) for v in report.params]
            for delta in deltas:
                value = rls_objective(problem, report.params, (1.0 + delta) * xis)
                result.rows.append(SweepRow(label, "scale", "shift", seed, delta,
                                            "rls-objective", value, xis.size))
        _write_train_csv(sdir / "train.csv", rows)
        _write_json(sdir / "params.json", params_payload)
        result.to_csv(sdir / "sweep.csv")


def _run_selftest(config, out: Path | None):
    from .selfcheck import run_all

    section = config.get("selftest", {}) if config else {}
    _check_keys(section, "selftest", optional=("fast",))
    fast = bool(section.get("fast", True))
    results = run_all(fast=fast)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    passed = sum(ok for _, ok, _ in results)
    print(f"{passed}/{len(results)} suites passed")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "selftest.json",
                    [{"suite": n, "ok": ok, "detail": d} for n, ok, d in results])
    if passed != len(results):
        raise NumericalError(f"{len(results) - passed} selftest suites failed")


_TOP_KEYS = {
    "train": ("kind", "seeds", "out", "dataset", "model", "loss", "train"),
    "attack-sweep": ("kind", "seeds", "out", "dataset", "model", "loss", "train", "attack"),
    "shift-sweep": ("kind", "seeds", "out", "dataset", "model", "loss", "train", "shift"),
    "certify": ("kind", "seeds", "out", "dataset", "model", "loss", "train", "certify"),
    "rls": ("kind", "seeds", "out", "rls"),
    "selftest": ("kind", "seeds", "out", "selftest"),
}


def run(config: dict, out_override=None) -> int:
    """Validate and execute one experiment config; returns the exit code."""
    if not isinstance(config, dict):
        raise ConfigError("config root must be a mapping")
    kind = config.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    keys = _TOP_KEYS[kind]
    _check_keys(config, "config", required=("kind",),
                optional=[k for k in keys if k != "kind"])
    for section in ("dataset", "model", "loss", "train"):
        if section in keys and kind != "selftest" and section not in config:
            raise ConfigError(f"config: missing required section {section!r}")
    if kind == "attack-sweep" and "attack" not in config:
        raise ConfigError("config: attack-sweep needs an 'attack' section")
    if kind == "shift-sweep" and "shift" not in config:
        raise ConfigError("config: shift-sweep needs a 'shift' section")
    if kind == "certify" and "certify" not in config:
        raise ConfigError("config: certify needs a 'certify' section")
    if kind == "rls" and "rls" not in config:
        raise ConfigError("config: rls needs an 'rls' section")

    seeds = config.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a non-empty list")
    seeds = [int(s) for s in seeds]

    out = out_override or config.get("out")
    if kind != "selftest":
        if out is None:
            raise ConfigError("an output directory is required ('out' key or --out)")
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config-echo.json", config)
    else:
        out = Path(out) if out else None

    if kind == "train":
        _run_train_kind(config, out, seeds)
    elif kind == "attack-sweep":
        _run_attack_sweep(config, out, seeds)
    elif kind == "shift-sweep":
        _run_shift_sweep(config, out, seeds)
    elif kind == "certify":
        _run_certify(config, out, seeds)
    elif kind == "rls":
        _run_rls(config, out, seeds)
    else:
        _run_selftest(config, out)
    return 0


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh)
    except OSError as err:
        raise DataError(f"cannot read config {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    if cfg is None:
        cfg = {}
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="arks",
        description="Robust training (erm / arks / wrm / pgd-at / ro) with attack "
        "and shift sweeps and robustness certificates.  Kernel convention: "
        "k(u, x) = exp(-cost/sigma) with sigma the squared length scale; the "
        "Gaussian kernel is the 'sq-l2-half' cost.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train one or more methods, emit train.csv and params.json",
        "sweep": "train then evaluate under attack or shift sweeps",
        "certify": "train then compute the robustness certificate",
        "rls": "the scalar-uncertainty robust least squares benchmark",
        "selftest": "run the invariant suites",
    }
    for name, help_text in helps.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=name != "selftest",
                       help="YAML/JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {"kind": "selftest"}
        kind = config.get("kind")
        if kind not in COMMAND_KINDS[args.command]:
            raise ConfigError(
                f"subcommand {args.command!r} expects kind in "
                f"{COMMAND_KINDS[args.command]}, config says {kind!r}"
            )
        return run(config, args.out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (DomainError, DivergenceError, NumericalError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except (DataError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 3
    except ArksError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
