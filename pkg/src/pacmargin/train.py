"""SGD training to a fixed cross-entropy, hyperparameter sweeps and sign errors."""

from __future__ import annotations

import csv
import io
import itertools
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Sequence

import numpy as np

from .bounds import DegenerateError, shel_complexity
from .data import LabeledDataset
from .margins import MarginError, MarginProfile, margin_for_target_loss
from .models import (
    PartialShelModel,
    ShelModel,
    init_partial_shel,
    init_shel,
    partial_shel_backward,
    partial_shel_forward,
    shel_backward,
    shel_forward,
)
from .montecarlo import stochastic_margin_loss, stochastic_margin_profiles, substream
from .numcore import DomainError

__all__ = [
    "TrainConfig",
    "SweepRecord",
    "SignErrorReport",
    "GRID_AXES",
    "train_to_cross_entropy",
    "calibrate_sigma",
    "feature_kl_term",
    "evaluate",
    "stochastic_gamma",
    "complete_record",
    "run_sweep",
    "sign_error",
    "records_to_csv",
    "records_from_csv",
    "sign_error_to_csv",
]

GRID_AXES = ("learning_rate", "width", "train_size")
GAMMA_TOL = 1e-4
GAMMA_WEIGHT_SAMPLES = 32


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    width: int
    train_size: int
    batch_size: int = 200
    momentum: float = 0.9
    target_ce: float = 0.3
    max_epochs: int = 200
    seed: int = 0
    model_kind: str = "shel"
    target_margin_loss: float = 0.2
    feature_width: int = 64
    repeats: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise DomainError("learning_rate must be nonnegative")
        if self.width < 1 or self.train_size < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise DomainError("width, train_size, batch_size and max_epochs must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError("momentum must lie in [0, 1)")
        if not self.target_ce > 0:
            raise DomainError("target_ce must be positive")
        if not 0.0 <= self.target_margin_loss < 1.0:
            raise DomainError("target_margin_loss must lie in [0, 1)")
        if self.model_kind not in ("shel", "partial_shel"):
            raise DomainError(f"unknown model_kind {self.model_kind!r}")
        if self.feature_width < 1 or self.repeats < 1:
            raise DomainError("feature_width and repeats must be positive")


@dataclass
class SweepRecord:
    """One trained grid point. ``status`` is ``ok`` or the reason it is excluded."""

    config: TrainConfig
    gamma: float
    train_error: float
    test_error: float
    complexity: float
    converged: bool
    run_seed: int
    epochs: int = 0
    final_ce: float = math.nan
    status: str = "ok"

    @property
    def gen_error(self) -> float:
        return self.test_error - self.train_error

    @property
    def usable(self) -> bool:
        return self.status == "ok" and self.converged


# --- training ------------------------------------------------------------------


def _params(model):
    if isinstance(model, PartialShelModel):
        return [*model.layers, model.head.U, model.head.V]
    return [model.U, model.V]


def _grads(model, x, y):
    if isinstance(model, PartialShelModel):
        loss, g_w, g_u, g_v = partial_shel_backward(model, x, y)
        return loss, [*g_w, g_u, g_v]
    loss, g_u, g_v = shel_backward(model, x, y)
    return loss, [g_u, g_v]


def _init_model(config: TrainConfig, dataset: LabeledDataset):
    rng = substream(config.seed, "init")
    if config.model_kind == "shel":
        return init_shel(dataset.dim, config.width, dataset.classes, rng)
    widths = (config.feature_width,) * 3
    return init_partial_shel(dataset.dim, widths, config.width, dataset.classes, rng)


def train_to_cross_entropy(config: TrainConfig, dataset: LabeledDataset):
    """SGD with momentum on the first ``train_size`` samples.

    The momentum buffer follows ``b <- mu b + g``, ``w <- w - lr b``. Stops
    once the epoch-mean training cross-entropy is at most ``target_ce`` or
    after ``max_epochs``. A non-finite loss stops training with status
    ``diverged``. Returns ``(model, record)``; the record's gamma, test
    error and complexity are left as NaN.
    """
    data = dataset.head(config.train_size)
    model = _init_model(config, data)
    rng = substream(config.seed, "shuffle")
    params = _params(model)
    buffers = [np.zeros_like(p) for p in params]
    converged = False
    status = "ok"
    epoch_ce = math.nan
    epochs = 0
    m = data.m
    for epochs in range(1, config.max_epochs + 1):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, config.batch_size):
            idx = order[start:start + config.batch_size]
            with np.errstate(all="ignore"):
                loss, grads = _grads(model, data.features[idx], data.labels[idx])
            if not math.isfinite(loss):
                status = "diverged"
                break
            total += loss * idx.size
            for p, b, g in zip(params, buffers, grads):
                b *= config.momentum
                b += g
                p -= config.learning_rate * b
        if status != "ok":
            break
        epoch_ce = total / m
        if epoch_ce <= config.target_ce:
            converged = True
            break
    record = SweepRecord(config, math.nan, math.nan, math.nan, math.nan, converged, config.seed,
                         epochs, epoch_ce, status)
    if status == "ok":
        record.train_error = _error_rate(model, data)
    return model, record


def _scores(model, x):
    if isinstance(model, PartialShelModel):
        return partial_shel_forward(model, x)
    return shel_forward(model, x)


def _error_rate(model, data: LabeledDataset) -> float:
    profile = MarginProfile.from_scores(_scores(model, data.features), data.labels)
    return profile.loss(0.0, conservative=True)


def evaluate(model, dataset: LabeledDataset) -> float:
    """Misclassification rate (margin at most 0) of the deterministic network."""
    return _error_rate(model, dataset)


# --- partially stochastic networks ----------------------------------------------


def calibrate_sigma(model: PartialShelModel, m: int) -> float:
    """``sqrt(sum ||W_i - W0_i||_F^2 / m)``, which sets the feature-KL term to 1/2."""
    if m < 1:
        raise DomainError("m must be positive")
    drift = model.drift_sq()
    if drift == 0.0:
        raise DegenerateError("feature layers equal their prior; sigma is undefined")
    return math.sqrt(drift / m)


def feature_kl_term(model: PartialShelModel, m: int, sigma: float | None = None) -> float:
    """``sqrt(sum ||W_i - W0_i||_F^2 / (4 m sigma^2))``."""
    sigma = model.sigma if sigma is None else sigma
    if sigma is None or not sigma > 0:
        raise DomainError("sigma must be positive")
    return math.sqrt(model.drift_sq() / (4.0 * m * sigma * sigma))


def stochastic_gamma(model: PartialShelModel, data: LabeledDataset, target: float, seed: int,
                     weight_samples: int = GAMMA_WEIGHT_SAMPLES, tol: float = GAMMA_TOL) -> float:
    """Largest gamma (to ``tol``) whose mean stochastic margin loss is at most ``target``.

    The same seed-pinned weight draws are reused at every bisection step.
    """
    profiles = stochastic_margin_profiles(model, data.features, data.labels, weight_samples, seed)

    def loss(g):
        return stochastic_margin_loss(model, data.features, data.labels, g, weight_samples, seed,
                                      profiles=profiles).mean

    lo = 0.0
    if loss(lo) > target:
        raise MarginError("margin-unachievable", f"stochastic margin loss at 0 exceeds {target}")
    hi = max(float(p.margins[-1]) for p in profiles) + 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if loss(mid) <= target:
            lo = mid
        else:
            hi = mid
    if lo <= 0.0:
        raise MarginError("margin-unachievable", "no positive margin meets the target")
    return lo


# --- sweeps --------------------------------------------------------------------


def complete_record(model, record: SweepRecord, train: LabeledDataset, test: LabeledDataset) -> SweepRecord:
    """Fill in gamma, complexity and test error for a trained model.

    The deterministic SHEL takes gamma as a margin order statistic; the
    partial variant calibrates sigma and bisects the stochastic margin loss.
    Margin failures become the record's status.
    """
    config = record.config
    if record.status != "ok":
        return record
    data = train.head(config.train_size)
    try:
        if isinstance(model, PartialShelModel):
            model.sigma = calibrate_sigma(model, data.m)
            gamma = stochastic_gamma(model, data, config.target_margin_loss, config.seed)
            head = model.head
        else:
            profile = MarginProfile.from_scores(shel_forward(model, data.features), data.labels)
            gamma = margin_for_target_loss(profile, config.target_margin_loss)
            head = model
        record.gamma = gamma
        record.complexity = shel_complexity(head, gamma, data.m)
        record.test_error = evaluate(model, test)
    except MarginError as exc:
        record.status = exc.kind
    except DomainError as exc:
        record.status = f"error: {exc}"
    return record


def _run_point(args):
    config, train, test = args
    try:
        model, record = train_to_cross_entropy(config, train)
    except DomainError as exc:
        return SweepRecord(config, math.nan, math.nan, math.nan, math.nan, False, config.seed,
                           status=f"error: {exc}")
    return complete_record(model, record, train, test)


def _grid_configs(grid: dict, base: TrainConfig) -> list:
    for axis in grid:
        if axis not in GRID_AXES:
            raise DomainError(f"unknown grid axis {axis!r}")
        if not grid[axis]:
            raise DomainError(f"grid axis {axis!r} is empty")
    axes = [a for a in GRID_AXES if a in grid]
    values = [sorted(grid[a]) for a in axes]
    configs = []
    for combo in itertools.product(*values):
        for r in range(base.repeats):
            configs.append(replace(base, **dict(zip(axes, combo)), seed=base.seed + r))
    return configs


def run_sweep(grid: dict, base: TrainConfig, train: LabeledDataset, test: LabeledDataset,
              workers: int = 1) -> list:
    """Train every grid point; smaller training sets are prefixes of larger ones.

    Records come back sorted by grid coordinates and seed, independent of
    ``workers``. ``base.repeats`` runs each point with seeds ``seed, seed+1, ...``.
    """
    configs = _grid_configs(grid, base)
    largest = max(c.train_size for c in configs)
    if largest > train.m:
        raise DomainError(f"train_size {largest} exceeds the {train.m} training samples")
    jobs = [(c, train, test) for c in configs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_point, jobs))
    else:
        records = [_run_point(j) for j in jobs]
    return records


# --- sign error -----------------------------------------------------------------


@dataclass
class SignErrorReport:
    axis: str
    pairs: list  # (value_a, value_b, sign_error, matched)
    max: float
    median: float
    mean: float
    excluded: list = field(default_factory=list)


def _sign(x: float) -> int:
    x = float(x)
    return (x > 0) - (x < 0)


def sign_error(records: Iterable[SweepRecord], axis: str) -> SignErrorReport:
    """Half the sign disagreement between complexity and generalisation changes.

    For every pair of values on ``axis`` the disagreement
    ``(1 - sign(dC) sign(dG)) / 2`` is averaged over configurations matching on
    every other field (seed included). A zero difference counts 1/2.
    Unusable records are listed in ``excluded``.
    """
    if axis not in GRID_AXES:
        raise DomainError(f"unknown axis {axis!r}")
    records = list(records)
    usable = [r for r in records if r.usable]
    excluded = [f"{_describe(r)}: {r.status if r.status != 'ok' else 'unconverged'}"
                for r in records if not r.usable]
    groups: dict = {}
    for r in usable:
        key = tuple((k, v) for k, v in asdict(r.config).items() if k != axis) + (("run_seed", r.run_seed),)
        groups.setdefault(key, {})[getattr(r.config, axis)] = r
    values = sorted({getattr(r.config, axis) for r in usable})
    pairs = []
    for a, b in itertools.combinations(values, 2):
        dis = []
        for members in groups.values():
            if a in members and b in members:
                ra, rb = members[a], members[b]
                dc = _sign(rb.complexity - ra.complexity)
                dg = _sign(rb.gen_error - ra.gen_error)
                dis.append(0.5 * (1 - dc * dg))
        if dis:
            pairs.append((a, b, sum(dis) / len(dis), len(dis)))
    if not pairs:
        raise DomainError(f"no matched record pairs along {axis!r}")
    se = [p[2] for p in pairs]
    return SignErrorReport(axis, pairs, max(se), statistics.median(se), sum(se) / len(se), excluded)


def _describe(r: SweepRecord) -> str:
    c = r.config
    return f"lr={c.learning_rate!r} width={c.width} m={c.train_size} seed={r.run_seed}"


# --- CSV -------------------------------------------------------------------------

_CONFIG_FIELDS = [f.name for f in fields(TrainConfig)]
RECORD_COLUMNS = _CONFIG_FIELDS + ["gamma", "train_error", "test_error", "G", "C", "converged",
                                   "run_seed", "epochs", "final_ce", "status"]


def _num(x) -> str:
    return repr(float(x))


def records_to_csv(records: Iterable[SweepRecord]) -> str:
    """Fixed column order: every TrainConfig field, then the outcomes."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for r in records:
        cfg = [repr(v) if isinstance(v, float) else str(v) for v in asdict(r.config).values()]
        writer.writerow(cfg + [_num(r.gamma), _num(r.train_error), _num(r.test_error), _num(r.gen_error),
                               _num(r.complexity), str(r.converged), str(r.run_seed), str(r.epochs),
                               _num(r.final_ce), r.status])
    return out.getvalue()


def records_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != RECORD_COLUMNS:
        raise DomainError("unexpected sweep CSV header")
    types = {f.name: f.type for f in fields(TrainConfig)}
    caster = {"float": float, "int": int, "str": str}
    records = []
    for row in reader:
        cfg = TrainConfig(**{k: caster[types[k]](row[k]) for k in _CONFIG_FIELDS})
        records.append(SweepRecord(cfg, float(row["gamma"]), float(row["train_error"]),
                                   float(row["test_error"]), float(row["C"]), row["converged"] == "True",
                                   int(row["run_seed"]), int(row["epochs"]), float(row["final_ce"]),
                                   row["status"]))
    return records


def sign_error_to_csv(reports: Sequence[SignErrorReport]) -> str:
    """Rows of (axis, pair, sign_error, matched) plus max/median/mean summary rows."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["axis", "pair", "sign_error", "matched"])
    for rep in reports:
        for a, b, se, n in rep.pairs:
            writer.writerow([rep.axis, f"{a!r}|{b!r}", repr(se), n])
        for stat in ("max", "median", "mean"):
            writer.writerow([rep.axis, stat, repr(float(getattr(rep, stat))), ""])
    return out.getvalue()
