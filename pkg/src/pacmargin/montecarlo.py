"""Randomised checks of the probabilistic lemmas behind the certificates.

Randomness comes from :func:`substream`, which derives an independent
Philox (counter-based, 64-bit) generator from ``(seed, tag)``; every check
is bit-reproducible for fixed parameters and seed. Stochastic checks pass
when the empirical quantity is within 3 standard errors of its bound;
deterministic inequalities tolerate only floating-point rounding.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .margins import MarginProfile, empirical_margin_loss
from .models import (
    PartialShelModel,
    ReluModel,
    ShelModel,
    StateError,
    partial_shel_forward,
    relu_forward,
    shel_forward,
)
from .numcore import DomainError, erf, spectral_norm

__all__ = [
    "McEstimate",
    "CheckRecord",
    "CouplingSpec",
    "substream",
    "default_probe_set",
    "estimate_uav",
    "estimate_av",
    "verify_margin_substitution",
    "coupling_difference_sampler",
    "verify_subgaussian_av",
    "verify_erf_identity",
    "mixture_kl_bound",
    "estimate_mixture_kl",
    "verify_perturbation_bound",
    "verify_tropp_tail",
    "stochastic_margin_profiles",
    "stochastic_margin_loss",
    "Z_THRESHOLD",
]

Z_THRESHOLD = 3.0
_CHUNK_ELEMENTS = 4_000_000


def substream(seed: int, tag: str) -> np.random.Generator:
    """Philox generator keyed by a BLAKE2b digest of ``(seed, tag)``."""
    digest = hashlib.blake2b(f"{int(seed)}:{tag}".encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class McEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: int
    per_point: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class CheckRecord:
    """One line of a verification report."""

    check: str
    params: dict
    estimate: float
    bound: float
    std_error: float
    passed: bool
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=True)


def _binomial_se(p, n):
    return np.sqrt(np.maximum(p * (1.0 - p), 0.0) / n)


# --- couplings ---------------------------------------------------------------


@dataclass
class CouplingSpec:
    """An explicit coupling between a random predictor P and a reference Q.

    kinds and their ``params``:

    ``identity-feature-map``
        ``w`` and optional ``sigma`` (default 0), ``feature_map``. P is
        ``<w + sigma g, phi(x)>``, Q is ``<w, phi(x)>`` with a shared feature
        draw ``phi``. ``feature_map(X, rng, B)`` returns ``(B, n, D)``
        features of norm at most 1; the default is ``x / max(1, ||x||)``.
    ``gaussian-linear``
        ``w`` and ``sigma``. P is ``<w + sigma g, x>``, Q the mean predictor.
    ``shel-proxy``
        ``model`` (a :class:`ShelModel`) and ``T``. P averages ``T`` random
        sign units; Q is ``F / (V_inf K)``.
    ``relu-gaussian-perturbation``
        ``model`` (a :class:`ReluModel`) and ``sigmas``, one per layer. P has
        Gaussian weights around the model, Q is the model.
    """

    kind: str
    params: dict

    KINDS = ("identity-feature-map", "gaussian-linear", "shel-proxy", "relu-gaussian-perturbation")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unknown coupling kind {self.kind!r}")
        p = self.params
        if self.kind in ("identity-feature-map", "gaussian-linear"):
            if "w" not in p:
                raise DomainError(f"{self.kind} coupling needs a weight vector 'w'")
            if p.get("sigma", 0.0) < 0:
                raise DomainError("sigma must be nonnegative")
            if self.kind == "gaussian-linear" and "sigma" not in p:
                raise DomainError("gaussian-linear coupling needs 'sigma'")
        elif self.kind == "shel-proxy":
            if not isinstance(p.get("model"), ShelModel) or int(p.get("T", 0)) < 1:
                raise DomainError("shel-proxy coupling needs a ShelModel 'model' and T >= 1")
            if p["model"].v_inf == 0.0:
                raise DomainError("degenerate SHEL model with V = 0")
        else:
            model = p.get("model")
            if not isinstance(model, ReluModel) or len(p.get("sigmas", ())) != model.depth:
                raise DomainError("relu coupling needs a ReluModel and one sigma per layer")

    @property
    def binary(self) -> bool:
        if self.kind in ("identity-feature-map", "gaussian-linear"):
            return True
        if self.kind == "shel-proxy":
            return self.params["model"].binary
        return self.params["model"].layers[-1].shape[0] == 1

    def reference_scores(self, X):
        """Scores of Q on the probe points."""
        p = self.params
        if self.kind == "gaussian-linear":
            return X @ np.asarray(p["w"], dtype=float)
        if self.kind == "shel-proxy":
            model = p["model"]
            return shel_forward(model, X) / (model.v_inf * model.width)
        if self.kind == "relu-gaussian-perturbation":
            out = relu_forward(p["model"], X, check_input=False)
            return out[:, 0] if self.binary else out
        raise DomainError("identity-feature-map scores depend on the shared feature draw")

    def sample_scores(self, X, count: int, rng) -> tuple:
        """``count`` coupled draws: ``(P scores, Q scores)``.

        P scores have shape ``(count, n)`` (binary) or ``(count, n, c)``; Q
        scores broadcast against them.
        """
        p = self.params
        X = np.asarray(X, dtype=float)
        if self.kind == "gaussian-linear":
            w = np.asarray(p["w"], dtype=float)
            g = rng.standard_normal((count, w.size))
            mean = X @ w
            return mean[None, :] + p["sigma"] * (g @ X.T), mean[None, :]
        if self.kind == "identity-feature-map":
            w = np.asarray(p["w"], dtype=float)
            fmap = p.get("feature_map") or _unit_ball_features
            phi = fmap(X, rng, count)
            g = rng.standard_normal((count, phi.shape[-1]))
            base = phi @ w
            sigma = float(p.get("sigma", 0.0))
            if sigma == 0.0:
                return base, base
            return base + sigma * np.einsum("bnd,bd->bn", phi, g), base
        if self.kind == "shel-proxy":
            return self._proxy_scores(X, count, rng), self.reference_scores(X)[None, ...]
        return self._relu_scores(X, count, rng), self.reference_scores(X)[None, ...]

    def _proxy_scores(self, X, count, rng):
        model = self.params["model"]
        T = int(self.params["T"])
        v_inf = model.v_inf
        k = rng.integers(0, model.width, size=(count, T))
        w = model.U[k] + rng.standard_normal((count, T, model.input_dim))
        signs = np.sign(np.einsum("btd,nd->btn", w, X))
        if model.binary:
            means = model.V[k] / v_inf
            r = np.where(rng.random(means.shape) < 0.5 * (1.0 + means), 1.0, -1.0)
            return np.einsum("btn,bt->bn", signs, r) / T
        means = model.V.T[k] / v_inf
        r = np.where(rng.random(means.shape) < 0.5 * (1.0 + means), 1.0, -1.0)
        return np.einsum("btn,btc->bnc", signs, r) / T

    def _relu_scores(self, X, count, rng):
        model = self.params["model"]
        h = np.broadcast_to(X, (count,) + X.shape)
        last = model.depth - 1
        for i, (w, s) in enumerate(zip(model.layers, self.params["sigmas"])):
            noisy = w[None] + s * rng.standard_normal((count,) + w.shape)
            h = np.einsum("bni,boi->bno", h, noisy)
            if i < last:
                h = np.maximum(h, 0.0)
        return h[..., 0] if self.binary else h

    def chunk_size(self, n_points: int) -> int:
        per = n_points
        if self.kind == "shel-proxy":
            per *= int(self.params["T"]) * max(1, self.params["model"].classes)
        elif self.kind == "relu-gaussian-perturbation":
            per *= sum(w.size for w in self.params["model"].layers) // max(1, n_points) + self.params["model"].max_units
        return max(1, _CHUNK_ELEMENTS // max(1, per))


def _unit_ball_features(X, rng, count):
    norms = np.maximum(1.0, np.linalg.norm(X, axis=1))
    return np.broadcast_to(X / norms[:, None], (count,) + X.shape)


def _margins(scores, labels, binary):
    if binary:
        return scores * labels
    labels = np.asarray(labels, dtype=np.int64)
    idx = np.arange(scores.shape[-2])
    own = scores[..., idx, labels]
    rest = scores.copy()
    rest[..., idx, labels] = -np.inf
    return own - rest.max(axis=-1)


def _check_points(X, labels):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels)
    if X.shape[0] == 0:
        raise DomainError("probe point set is empty")
    if labels.shape != (X.shape[0],):
        raise DomainError("one label per probe point")
    return X, labels


def _coupled_margin_chunks(spec: CouplingSpec, X, labels, n, rng) -> Iterator[tuple]:
    chunk = spec.chunk_size(X.shape[0])
    done = 0
    binary = spec.binary
    y = labels.astype(float) if binary else labels
    while done < n:
        b = min(chunk, n - done)
        fs, gs = spec.sample_scores(X, b, rng)
        mf = _margins(fs, y, binary)
        mg = np.broadcast_to(_margins(gs, y, binary), mf.shape)
        yield mf, mg
        done += b


def default_probe_set(X, labels, classes: int | None, rng, n_random: int = 64):
    """The given points plus ``n_random`` random unit vectors under every label.

    ``classes=None`` means binary labels in {+1, -1}.
    """
    X, labels = _check_points(X, labels)
    u = rng.standard_normal((n_random, X.shape[1]))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    label_set = np.array([1, -1]) if classes is None else np.arange(classes)
    extra_x = np.repeat(u, len(label_set), axis=0)
    extra_y = np.tile(label_set, n_random)
    return np.vstack([X, extra_x]), np.concatenate([labels, extra_y]).astype(labels.dtype)


def estimate_uav(spec: CouplingSpec, X, labels, gamma: float, n: int, seed: int,
                 reverse: bool = False, two_sided: bool = False) -> McEstimate:
    """Worst-point exceedance ``max_z Pr{M(f, z) - M(g, z) > gamma/2}``.

    ``f`` is the P draw and ``g`` its Q partner; ``reverse`` swaps their
    roles and ``two_sided`` uses ``|M(f, z) - M(g, z)|``. The maximum is over
    the supplied probe points; the standard error is the binomial one at the
    maximising point.
    """
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    if n < 1000:
        raise DomainError("need at least 1000 samples")
    X, labels = _check_points(X, labels)
    rng = substream(seed, f"uav:{spec.kind}")
    counts = np.zeros(X.shape[0])
    for mf, mg in _coupled_margin_chunks(spec, X, labels, n, rng):
        diff = mg - mf if reverse else mf - mg
        if two_sided:
            diff = np.abs(diff)
        counts += np.sum(diff > gamma / 2.0, axis=0)
    rates = counts / n
    worst = int(np.argmax(rates))
    return McEstimate(float(rates[worst]), float(_binomial_se(rates[worst], n)), n, seed, rates)


def estimate_av(spec: CouplingSpec, X, labels, gamma: float, n: int, seed: int) -> tuple:
    """Both directions of the exceedance and their maximum."""
    forward = estimate_uav(spec, X, labels, gamma, n, seed)
    backward = estimate_uav(spec, X, labels, gamma, n, seed, reverse=True)
    worst = forward if forward.mean >= backward.mean else backward
    return worst, forward, backward


def verify_margin_substitution(spec: CouplingSpec, X, labels, gamma: float, n: int, seed: int) -> list:
    """Check the margin-substitution inequalities on a finite probe set.

    With the probe set as the data distribution, checks
    ``L_0(P) <= L_{gamma/2}(Q) + Pr{M(q) - M(p) > gamma/2}`` and
    ``L_{gamma/2}(Q) <= L_gamma(P) + Pr{M(p) - M(q) > gamma/2}``, averaging over
    probe points. Standard errors combine the per-draw variability of each
    side.
    """
    X, labels = _check_points(X, labels)
    rng = substream(seed, f"substitution:{spec.kind}")
    half = gamma / 2.0
    cols = {"lp0": [], "lqh": [], "lpg": [], "ex_qp": [], "ex_pq": []}
    for mf, mg in _coupled_margin_chunks(spec, X, labels, n, rng):
        cols["lp0"].append(np.mean(mf <= 0.0, axis=1))
        cols["lqh"].append(np.mean(mg <= half, axis=1))
        cols["lpg"].append(np.mean(mf <= gamma, axis=1))
        cols["ex_qp"].append(np.mean(mg - mf > half, axis=1))
        cols["ex_pq"].append(np.mean(mf - mg > half, axis=1))
    v = {k: np.concatenate(c) for k, c in cols.items()}

    def row(name, lhs, rhs, ex):
        slack = rhs + ex - lhs
        se = float(np.std(slack, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        est = float(np.mean(lhs))
        bound = float(np.mean(rhs) + np.mean(ex))
        return CheckRecord(name, {"kind": spec.kind, "gamma": gamma, "n": n}, est, bound, se,
                           bool(est <= bound + Z_THRESHOLD * se), seed)

    return [
        row("substitution_lower", v["lp0"], v["lqh"], v["ex_qp"]),
        row("substitution_upper", v["lqh"], v["lpg"], v["ex_pq"]),
    ]


# --- sub-Gaussian tails -------------------------------------------------------


def coupling_difference_sampler(spec: CouplingSpec, x, components: tuple | None = None) -> tuple:
    """Sampler of zero-mean score differences ``f(x) - g(x)`` at one point.

    Returns ``(sampler, sigma2)`` with ``sampler(rng, n)`` giving ``(n,)``
    differences (binary) or ``(n, 2)`` differences for the two score
    ``components`` (multiclass), and ``sigma2`` the sub-Gaussian variance
    proxy of the coupling at ``x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if spec.kind == "gaussian-linear":
        sigma2 = spec.params["sigma"] ** 2 * float(np.sum(x * x))
    elif spec.kind == "shel-proxy":
        sigma2 = 1.0 / int(spec.params["T"])
    elif spec.kind == "identity-feature-map":
        sigma2 = spec.params.get("sigma", 0.0) ** 2
    else:
        raise DomainError("no closed-form variance proxy for the ReLU coupling")

    def sampler(rng, n):
        out = []
        chunk = spec.chunk_size(1)
        done = 0
        while done < n:
            b = min(chunk, n - done)
            fs, gs = spec.sample_scores(x, b, rng)
            d = (fs - gs)[:, 0]
            if d.ndim == 2:
                if components is None:
                    raise DomainError("multiclass differences need two score components")
                d = d[:, list(components)]
            out.append(d)
            done += b
        return np.concatenate(out)

    return sampler, sigma2


def verify_subgaussian_av(sigma2: float, sampler: Callable, gammas: Sequence[float], mode: str,
                          n: int, seed: int, name: str = "subgaussian_av") -> list:
    """Empirical margin-difference tails against ``exp(-gamma^2 / (8 or 16) sigma^2)``.

    ``mode='binary'``: the sampler yields score differences ``X``; the tail is
    ``max(Pr{X > gamma/2}, Pr{-X > gamma/2})``. ``mode='multiclass'``: it yields
    ``(n, 2)`` differences for components ``(y, y')`` and the tail is taken on
    their difference. One record per gamma.
    """
    if mode not in ("binary", "multiclass"):
        raise DomainError("mode must be 'binary' or 'multiclass'")
    if n < 10_000:
        raise DomainError("need at least 10^4 samples")
    rng = substream(seed, f"subgaussian:{mode}")
    draws = np.asarray(sampler(rng, n), dtype=float)
    x = draws if mode == "binary" else draws[:, 0] - draws[:, 1]
    denom = 8.0 if mode == "binary" else 16.0
    records = []
    for gamma in gammas:
        tail = max(float(np.mean(x > gamma / 2.0)), float(np.mean(-x > gamma / 2.0)))
        se = float(_binomial_se(tail, n))
        bound = math.exp(-gamma * gamma / (denom * sigma2)) if sigma2 > 0 else 0.0
        records.append(CheckRecord(name, {"gamma": float(gamma), "sigma2": float(sigma2), "mode": mode, "n": n},
                                   tail, bound, se, bool(tail <= bound + Z_THRESHOLD * se), seed))
    return records


def verify_erf_identity(u, x, n: int, seed: int) -> tuple:
    """Monte-Carlo ``E sign(w . x)`` for ``w ~ N(u, I)`` against ``erf(u . x / (sqrt 2 ||x||))``.

    Returns ``(estimate, closed_form, passed)``.
    """
    u = np.asarray(u, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise DomainError("x must be nonzero")
    if n < 10_000:
        raise DomainError("need at least 10^4 samples")
    rng = substream(seed, "erf-identity")
    total = 0.0
    total_sq = 0.0
    chunk = max(1, _CHUNK_ELEMENTS // u.size)
    done = 0
    while done < n:
        b = min(chunk, n - done)
        s = np.sign((u[None, :] + rng.standard_normal((b, u.size))) @ x)
        total += float(np.sum(s))
        total_sq += float(np.sum(s * s))
        done += b
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0) * n / (n - 1)
    est = McEstimate(mean, math.sqrt(var / n), n, seed)
    closed = float(erf(float(u @ x) / (math.sqrt(2.0) * norm)))
    return est, closed, bool(abs(mean - closed) <= Z_THRESHOLD * est.std_error)


# --- Gaussian mixtures ---------------------------------------------------------


def _check_weights(p, name):
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"{name} must be a probability vector")
    return p


def mixture_kl_bound(p, means, p0, means0) -> float:
    """``KL(p, p0) + 1/2 sum_k p_k ||mu_k - mu0_k||^2``."""
    p = _check_weights(p, "p")
    p0 = _check_weights(p0, "p0")
    means = np.asarray(means, dtype=float)
    means0 = np.asarray(means0, dtype=float)
    if means.shape != means0.shape or means.shape[0] != p.size or p0.size != p.size:
        raise DomainError("mixture shapes do not match")
    nz = p > 0
    if np.any(p0[nz] == 0):
        return math.inf
    cat = float(np.sum(p[nz] * np.log(p[nz] / p0[nz])))
    shift = float(np.sum(p * np.sum((means - means0) ** 2, axis=1)))
    return cat + 0.5 * shift


def _mixture_logpdf(x, p, means):
    # unnormalised: the Gaussian constant cancels in the log ratio
    with np.errstate(divide="ignore"):
        logw = np.log(p)
    sq = np.sum((x[:, None, :] - means[None, :, :]) ** 2, axis=2)
    a = logw[None, :] - 0.5 * sq
    top = np.max(a, axis=1, keepdims=True)
    return top[:, 0] + np.log(np.sum(np.exp(a - top), axis=1))


def estimate_mixture_kl(p, means, p0, means0, n: int, seed: int) -> tuple:
    """KL between identity-covariance Gaussian mixtures by sampling the first.

    Returns ``(estimate, bound, passed)``.
    """
    if n < 100_000:
        raise DomainError("need at least 10^5 samples")
    bound = mixture_kl_bound(p, means, p0, means0)
    p = _check_weights(p, "p")
    p0 = _check_weights(p0, "p0")
    means = np.asarray(means, dtype=float)
    means0 = np.asarray(means0, dtype=float)
    rng = substream(seed, "mixture-kl")
    k = rng.choice(p.size, size=n, p=p)
    x = means[k] + rng.standard_normal((n, means.shape[1]))
    ratio = _mixture_logpdf(x, p, means) - _mixture_logpdf(x, p0, means0)
    est = McEstimate(float(np.mean(ratio)), float(np.std(ratio, ddof=1) / math.sqrt(n)), n, seed)
    return est, bound, bool(est.mean <= bound + Z_THRESHOLD * est.std_error)


# --- ReLU perturbations ---------------------------------------------------------


def verify_perturbation_bound(model: ReluModel, scale: float, X, n: int, seed: int,
                              rtol: float = 1e-12) -> CheckRecord:
    """Check ``||f(x) - F(x)|| <= e R prod ||W_i|| sum ||U_i|| / ||W_i||``.

    Each of ``n`` draws has Gaussian perturbations ``U_i`` rescaled to
    spectral norm exactly ``scale * ||W_i|| / d``; ``scale = 1`` sits on the
    precondition boundary. Every probe point must satisfy ``||x|| <= R``.
    The only slack allowed is ``rtol`` for floating-point rounding.
    """
    if not 0.0 <= scale <= 1.0:
        raise DomainError("scale must lie in [0, 1]; larger perturbations break the precondition")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if np.any(np.linalg.norm(X, axis=1) > model.R * (1.0 + 1e-12)):
        raise DomainError("probe points must lie in the radius-R ball")
    rng = substream(seed, "perturbation")
    d = model.depth
    spec = [spectral_norm(w) for w in model.layers]
    prod = math.prod(spec)
    base = relu_forward(model, X)
    violations = 0
    worst_ratio = 0.0
    for _ in range(n):
        pert = []
        ratio_sum = 0.0
        for w, s in zip(model.layers, spec):
            u = rng.standard_normal(w.shape)
            target = scale * s / d
            norm_u = float(np.linalg.norm(u, 2))
            u = u * (target / norm_u) if norm_u > 0 else u * 0.0
            pert.append(w + u)
            ratio_sum += float(np.linalg.norm(u, 2)) / s if s > 0 else 0.0
        rhs = math.e * model.R * prod * ratio_sum
        out = relu_forward(ReluModel(pert, model.priors, model.R), X)
        lhs = np.linalg.norm(np.atleast_2d(out - base), axis=1)
        violations += int(np.sum(lhs > rhs * (1.0 + rtol) + 1e-300))
        if rhs > 0:
            worst_ratio = max(worst_ratio, float(np.max(lhs)) / rhs)
    return CheckRecord("perturbation_bound",
                       {"depth": d, "h": model.max_units, "scale": scale, "n": n, "points": X.shape[0],
                        "violations": violations},
                       worst_ratio, 1.0, 0.0, violations == 0, seed)


def verify_tropp_tail(h: int, sigma: float, ts: Sequence[float], n: int, seed: int) -> list:
    """Empirical ``Pr{||U||_2 > t}`` for ``h x h`` Gaussian ``U`` against ``2h exp(-t^2 / 2 h sigma^2)``."""
    if n < 10_000:
        raise DomainError("need at least 10^4 samples")
    rng = substream(seed, f"tropp:{h}")
    norms = np.empty(n)
    chunk = max(1, _CHUNK_ELEMENTS // (h * h))
    done = 0
    while done < n:
        b = min(chunk, n - done)
        mats = sigma * rng.standard_normal((b, h, h))
        norms[done:done + b] = np.linalg.svd(mats, compute_uv=False)[:, 0]
        done += b
    records = []
    for t in ts:
        tail = float(np.mean(norms > t))
        se = float(_binomial_se(tail, n))
        bound = 2.0 * h * math.exp(-t * t / (2.0 * h * sigma * sigma))
        records.append(CheckRecord("tropp_tail", {"h": h, "sigma": sigma, "t": float(t), "n": n},
                                   tail, bound, se, bool(tail <= bound + Z_THRESHOLD * se), seed))
    return records


# --- partially stochastic networks ----------------------------------------------


def stochastic_margin_profiles(model: PartialShelModel, X, labels, weight_samples: int, seed: int) -> list:
    """Margin profiles of ``weight_samples`` noisy copies of the feature layers."""
    if weight_samples < 1:
        raise DomainError("need at least one weight sample")
    if model.sigma is None:
        raise StateError("sigma has not been calibrated")
    rng = substream(seed, "stochastic-margin")
    profiles = []
    for _ in range(weight_samples):
        noise = [rng.standard_normal(w.shape) for w in model.layers]
        scores = partial_shel_forward(model, X, noise)
        profiles.append(MarginProfile.from_scores(scores, labels))
    return profiles


def stochastic_margin_loss(model: PartialShelModel, X, labels, gamma: float, weight_samples: int,
                           seed: int, profiles: list | None = None) -> McEstimate:
    """Mean empirical margin loss over random feature weights."""
    if profiles is None:
        profiles = stochastic_margin_profiles(model, X, labels, weight_samples, seed)
    losses = np.array([empirical_margin_loss(p, gamma) for p in profiles])
    se = float(np.std(losses, ddof=1) / math.sqrt(losses.size)) if losses.size > 1 else 0.0
    return McEstimate(float(np.mean(losses)), se, int(losses.size), seed)
