"""Command-line entry point.

Exit codes: 0 success, 1 usage or domain error, 2 a verification check failed.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds, montecarlo, train
from .config import SWEEP_SCHEMA, TRAIN_SCHEMA, load_config
from .data import load_mnist, read_csv_dataset, synth_blobs
from .margins import MarginError, MarginProfile, margin_for_target_loss
from .models import (
    LinearModel,
    ReluModel,
    ShelModel,
    StateError,
    init_shel,
    load_model,
    relu_forward,
    save_model,
    shel_forward,
)
from .numcore import DomainError
from .svg import Panel, Series, render_panels

__all__ = ["main", "VERIFY_SUITES"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# --- certify -------------------------------------------------------------------


def _load(path, kind):
    model = load_model(path)
    if not isinstance(model, kind):
        raise DomainError(f"{path}: expected a {kind.__name__}, found {type(model).__name__}")
    return model


def _gamma(profile: MarginProfile, args) -> float:
    if args.gamma is not None:
        return args.gamma
    return margin_for_target_loss(profile, args.target_loss)


def cmd_certify_linear(args) -> int:
    model = _load(args.model, LinearModel)
    model.validate()
    data = read_csv_dataset(args.data)
    if not data.binary:
        raise DomainError("linear certificates need +1/-1 labels")
    profile = MarginProfile.from_scores(model.scores(data.features), data.labels)
    if model.norm_kind == "L1":
        R = args.R if args.R is not None else float(np.max(np.abs(data.features)))
        cert = bounds.linear_l1_soft(profile, R, data.dim, _gamma(profile, args), args.delta)
    else:
        R = args.R if args.R is not None else float(np.max(np.linalg.norm(data.features, axis=1)))
        if args.form == "hard":
            cert = bounds.linear_l2_hard(profile, R, args.delta)
        elif args.form == "smallkl":
            cert = bounds.linear_l2_smallkl(profile, R, _gamma(profile, args), args.delta)
        else:
            cert = bounds.linear_l2_soft(profile, R, _gamma(profile, args), args.delta)
    _emit(bounds.certificates_to_csv([cert]), args.out)
    return 0


def cmd_certify_shel(args) -> int:
    model = _load(args.model, ShelModel)
    data = read_csv_dataset(args.data)
    profile = MarginProfile.from_scores(shel_forward(model, data.features), data.labels)
    gamma = _gamma(profile, args)
    if model.binary:
        cert = bounds.shel_binary_certificate(model, profile, gamma, args.delta)
    else:
        cert = bounds.shel_certificate(model, profile, gamma, args.delta)
    _emit(bounds.certificates_to_csv([cert]), args.out)
    return 0


def cmd_certify_relu(args) -> int:
    model = _load(args.model, ReluModel)
    data = read_csv_dataset(args.data)
    scores = relu_forward(model, data.features)
    profile = MarginProfile.from_scores(scores[:, 0] if scores.shape[1] == 1 else scores, data.labels)
    theta = _gamma(profile, args)
    cert = bounds.relu_certificate(model, profile, theta, args.delta, w_star=args.w_star)
    _emit(bounds.certificates_to_csv([cert]), args.out)
    return 0


# --- train / sweep -------------------------------------------------------------


def _datasets(cfg: dict):
    if "train_data" in cfg:
        if "test_data" not in cfg:
            raise DomainError("train_data needs a matching test_data")
        return read_csv_dataset(cfg["train_data"]), read_csv_dataset(cfg["test_data"], "test")
    if "train_images" in cfg:
        keys = ("train_labels", "test_images", "test_labels")
        if any(k not in cfg for k in keys):
            raise DomainError("IDX input needs train_images, train_labels, test_images and test_labels")
        return (load_mnist(cfg["train_images"], cfg["train_labels"]),
                load_mnist(cfg["test_images"], cfg["test_labels"], "test"))
    if "synth_classes" in cfg:
        classes = cfg["synth_classes"]
        dim = cfg.get("synth_dim", 20)
        sep = cfg.get("synth_separation", 3.0)
        seed = cfg.get("synth_seed", 0)
        tr = synth_blobs(classes, cfg.get("synth_train_per_class", 500), dim, sep, seed)
        te = synth_blobs(classes, cfg.get("synth_test_per_class", 500), dim, sep, seed + 1, split="test")
        return tr, te
    raise DomainError("config names no dataset (train_data, train_images or synth_classes)")


_CONFIG_KEYS = [f for f in train.TrainConfig.__dataclass_fields__]


def _base_config(cfg: dict, **axes) -> train.TrainConfig:
    kw = {k: v for k, v in cfg.items() if k in _CONFIG_KEYS}
    kw.update(axes)
    return train.TrainConfig(**kw)


def cmd_train(args) -> int:
    cfg = load_config(args.config, TRAIN_SCHEMA)
    for key in ("learning_rate", "width", "train_size"):
        if key not in cfg:
            raise DomainError(f"config is missing {key!r}")
    tr, te = _datasets(cfg)
    config = _base_config(cfg)
    model, record = train.train_to_cross_entropy(config, tr)
    record = train.complete_record(model, record, tr, te)
    if "model_out" in cfg:
        save_model(cfg["model_out"], model)
    _emit(train.records_to_csv([record]), cfg.get("out"))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, SWEEP_SCHEMA)
    grid = {}
    for key, axis in (("learning_rates", "learning_rate"), ("widths", "width"), ("train_sizes", "train_size")):
        if key not in cfg:
            raise DomainError(f"config is missing {key!r}")
        grid[axis] = cfg[key]
    tr, te = _datasets(cfg)
    base = _base_config(cfg, learning_rate=grid["learning_rate"][0], width=grid["width"][0],
                        train_size=grid["train_size"][0])
    records = train.run_sweep(grid, base, tr, te, workers=cfg.get("workers", 1))
    _emit(train.records_to_csv(records), cfg.get("out"))
    return 0


def _read_records(path):
    return train.records_from_csv(Path(path).read_text())


def cmd_sign_error(args) -> int:
    records = _read_records(args.records)
    axes = args.axis or [a for a in train.GRID_AXES
                         if len({getattr(r.config, a) for r in records}) > 1]
    if not axes:
        raise DomainError("no axis varies across the records")
    reports = [train.sign_error(records, a) for a in axes]
    _emit(train.sign_error_to_csv(reports), args.out)
    return 0


def cmd_plot(args) -> int:
    records = [r for r in _read_records(args.records) if r.status == "ok"]
    if not records:
        raise DomainError("no usable records to plot")
    axis = args.axis
    other = [a for a in train.GRID_AXES if a != axis]
    records.sort(key=lambda r: ([getattr(r.config, a) for a in other], r.run_seed, getattr(r.config, axis)))
    groups: dict = {}
    for i, r in enumerate(records):
        groups.setdefault((tuple(getattr(r.config, a) for a in other), r.run_seed), []).append(i)
    xs = [float(getattr(r.config, axis)) for r in records]
    segments = [g for g in groups.values() if len(g) > 1]
    panels = [
        Panel(f"complexity vs {axis}", axis, "C", [Series("C", [(x, r.complexity) for x, r in zip(xs, records)],
                                                          segments)], log_x=args.log_x),
        Panel(f"generalisation gap vs {axis}", axis, "G", [Series("G", [(x, r.gen_error) for x, r in zip(xs, records)],
                                                                   segments)], log_x=args.log_x),
    ]
    Path(args.out).write_text(render_panels(panels))
    return 0


# --- verify ----------------------------------------------------------------------


def _suite_erf(seed, n):
    rng = montecarlo.substream(seed, "suite-erf")
    out = []
    for i, d in enumerate((2, 10, 50) * 4):
        u = rng.standard_normal(d)
        x = rng.standard_normal(d)
        est, closed, ok = montecarlo.verify_erf_identity(u, x, n or 100_000, seed + i)
        out.append(montecarlo.CheckRecord("erf_identity", {"d": d, "case": i, "n": est.n_samples},
                                          est.mean, closed, est.std_error, ok, seed + i))
    return out


def _suite_subgaussian(seed, n):
    n = n or 100_000
    gammas = (0.5, 1.0, 2.0, 4.0)
    rng = montecarlo.substream(seed, "suite-subgaussian")
    x = rng.standard_normal(5)
    x /= np.linalg.norm(x)
    lin = montecarlo.CouplingSpec("gaussian-linear", {"w": rng.standard_normal(5), "sigma": 1.0})
    sampler, s2 = montecarlo.coupling_difference_sampler(lin, x)
    out = montecarlo.verify_subgaussian_av(s2, sampler, gammas, "binary", n, seed, "subgaussian_gaussian_linear")
    shel = init_shel(5, 16, 3, rng)
    proxy = montecarlo.CouplingSpec("shel-proxy", {"model": shel, "T": 100})
    sampler, s2 = montecarlo.coupling_difference_sampler(proxy, x, (0, 1))
    out += montecarlo.verify_subgaussian_av(s2, sampler, gammas, "multiclass", n, seed, "subgaussian_shel_proxy")
    return out


def _suite_mixture(seed, n):
    rng = montecarlo.substream(seed, "suite-mixture")
    out = []
    for i in range(10):
        K = int(rng.integers(1, 6))
        d = int(rng.integers(1, 6))
        p = rng.dirichlet(np.ones(K))
        p0 = rng.dirichlet(np.ones(K))
        mu = rng.standard_normal((K, d))
        mu0 = rng.standard_normal((K, d))
        est, bound, ok = montecarlo.estimate_mixture_kl(p, mu, p0, mu0, n or 100_000, seed + i)
        out.append(montecarlo.CheckRecord("mixture_kl", {"K": K, "d": d, "case": i, "n": est.n_samples},
                                          est.mean, bound, est.std_error, ok, seed + i))
    return out


def _suite_perturbation(seed, n):
    rng = montecarlo.substream(seed, "suite-perturbation")
    out = []
    for depth in (2, 3):
        dims = [int(rng.integers(2, 17)) for _ in range(depth + 1)]
        layers = [rng.standard_normal((dims[i + 1], dims[i])) for i in range(depth)]
        model = ReluModel(layers, None, 1.0)
        X = rng.standard_normal((32, dims[0]))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        out.append(montecarlo.verify_perturbation_bound(model, 1.0, X, n or 100, seed + depth))
    return out


def _suite_tropp(seed, n):
    out = []
    for h in (1, 4, 16):
        ts = [c * math.sqrt(h) for c in (1.0, 2.0, 4.0)]
        out += montecarlo.verify_tropp_tail(h, 1.0, ts, n or 10_000, seed + h)
    return out


def _suite_substitution(seed, n):
    rng = montecarlo.substream(seed, "suite-substitution")
    X = rng.standard_normal((16, 4))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    y = np.where(rng.random(16) < 0.5, 1, -1)
    spec = montecarlo.CouplingSpec("gaussian-linear", {"w": rng.standard_normal(4), "sigma": 0.5})
    return montecarlo.verify_margin_substitution(spec, X, y, 1.0, n or 10_000, seed)


VERIFY_SUITES = {
    "erf": _suite_erf,
    "subgaussian": _suite_subgaussian,
    "mixture": _suite_mixture,
    "perturbation": _suite_perturbation,
    "tropp": _suite_tropp,
    "substitution": _suite_substitution,
}


def cmd_verify(args) -> int:
    names = list(VERIFY_SUITES) if args.suite == "all" else [args.suite]
    records = []
    for name in names:
        records += VERIFY_SUITES[name](args.seed, args.n)
    _emit("".join(r.to_json() + "\n" for r in records), args.out)
    return 0 if all(r.passed for r in records) else 2


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pacmargin", description="Margin-based PAC-Bayes certificates and sweeps.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def certify(name, func, margin_name="--gamma"):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True, help="CSV dataset with a 'label' column")
        p.add_argument("--delta", type=float, required=True)
        p.add_argument(margin_name, dest="gamma", type=float, default=None)
        p.add_argument("--target-loss", type=float, default=0.2,
                       help="pick the margin as this empirical margin-loss quantile when no margin is given")
        p.add_argument("--out")
        p.set_defaults(func=func)
        return p

    p = certify("certify-linear", cmd_certify_linear)
    p.add_argument("--R", type=float, default=None)
    p.add_argument("--form", choices=("soft", "smallkl", "hard"), default="soft")
    certify("certify-shel", cmd_certify_shel)
    p = certify("certify-relu", cmd_certify_relu, "--theta")
    p.add_argument("--w-star", type=float, default=None)

    for name, func in (("train", cmd_train), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("sign-error")
    p.add_argument("--records", required=True)
    p.add_argument("--axis", action="append", choices=train.GRID_AXES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sign_error)

    p = sub.add_parser("verify")
    p.add_argument("--suite", choices=("all", *VERIFY_SUITES), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=None, help="override the per-check sample count")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot")
    p.add_argument("--records", required=True)
    p.add_argument("--axis", choices=train.GRID_AXES, required=True)
    p.add_argument("--log-x", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DomainError, MarginError, StateError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
