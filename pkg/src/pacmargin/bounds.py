"""Margin-based PAC-Bayes certificates.

Each certificate takes the model quantities it needs, a margin profile (or an
already computed empirical margin loss), a confidence ``delta`` and the
sample size ``m``, and returns a :class:`BoundCertificate`. Certificates
never raise for vacuity: they clamp to 1 and set ``vacuous``.

Logarithms are natural except for the explicit ``log2`` in the union-bound
cover terms of the SHEL-binary and ReLU certificates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields
from typing import Iterable

import numpy as np

from .margins import MarginProfile, empirical_margin_loss, min_positive_margin
from .models import ReluModel, ShelModel
from .numcore import DomainError, categorical_entropy, frobenius_sq, kl_inverse_upper, spectral_norm

__all__ = [
    "PreconditionError",
    "DegenerateError",
    "BoundCertificate",
    "FeatureMapKl",
    "linear_l2_soft",
    "linear_l2_smallkl",
    "linear_l2_hard",
    "linear_l1_soft",
    "linear_partial",
    "smallkl_bound",
    "soft_relaxation",
    "shel_kl_budget",
    "shel_certificate",
    "shel_complexity",
    "shel_binary_kl_budget",
    "shel_binary_certificate",
    "relu_inverse_variances",
    "relu_certificate",
    "certificates_to_csv",
    "certificates_from_csv",
]


class PreconditionError(DomainError):
    """Inputs violate a theorem's standing assumptions."""


class DegenerateError(DomainError):
    """The model is degenerate (e.g. an all-zero output layer)."""


@dataclass(frozen=True)
class FeatureMapKl:
    """KL divergence of a stochastic feature map from its prior."""

    kl_value: float

    def __post_init__(self):
        if not self.kl_value >= 0.0:
            raise DomainError(f"feature-map KL must be nonnegative, got {self.kl_value!r}")


@dataclass
class BoundCertificate:
    bound: float
    theorem: str
    gamma: float
    delta: float
    m: int
    empirical_loss: float
    complexity: float
    epsilon_term: float
    cover_params: dict = field(default_factory=dict)
    vacuous: bool = False

    def to_record(self) -> dict:
        rec = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "cover_params"}
        for key in sorted(self.cover_params):
            rec[f"cover_{key}"] = self.cover_params[key]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "BoundCertificate":
        cover = {k[len("cover_"):]: float(v) for k, v in rec.items() if k.startswith("cover_") and v != ""}
        return cls(
            bound=float(rec["bound"]),
            theorem=str(rec["theorem"]),
            gamma=float(rec["gamma"]),
            delta=float(rec["delta"]),
            m=int(rec["m"]),
            empirical_loss=float(rec["empirical_loss"]),
            complexity=float(rec["complexity"]),
            epsilon_term=float(rec["epsilon_term"]),
            cover_params=cover,
            vacuous=str(rec["vacuous"]) in ("True", "true", "1"),
        )


_BASE_COLUMNS = [f.name for f in fields(BoundCertificate) if f.name != "cover_params"]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def certificates_to_csv(certs: Iterable[BoundCertificate], stream=None) -> str:
    """Write certificates as CSV (header row, one column per field).

    Floats are written with ``repr`` so they parse back bit-identically.
    """
    certs = list(certs)
    cover_keys = sorted({k for c in certs for k in c.cover_params})
    header = _BASE_COLUMNS + [f"cover_{k}" for k in cover_keys]
    out = io.StringIO() if stream is None else stream
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for cert in certs:
        rec = cert.to_record()
        writer.writerow([_fmt(rec[h]) if h in rec else "" for h in header])
    return out.getvalue() if stream is None else ""


def certificates_from_csv(text: str) -> list:
    return [BoundCertificate.from_record(row) for row in csv.DictReader(io.StringIO(text))]


def _check_common(delta, m, min_m=8):
    if not 0.0 < delta < 1.0:
        raise PreconditionError(f"delta must lie in (0, 1), got {delta!r}")
    if int(m) != m or m < min_m:
        raise PreconditionError(f"m must be an integer >= {min_m}, got {m!r}")


def _loss(profile, gamma, conservative=False) -> float:
    if isinstance(profile, MarginProfile):
        return empirical_margin_loss(profile, gamma, conservative)
    loss = float(profile)
    if not 0.0 <= loss <= 1.0:
        raise DomainError(f"empirical loss must lie in [0, 1], got {loss!r}")
    return loss


def _m_of(profile, m):
    if m is None:
        if not isinstance(profile, MarginProfile):
            raise DomainError("m is required when passing a precomputed loss")
        return profile.m
    return int(m)


def _clamp(value: float, vacuous: bool = False):
    if vacuous or not value < 1.0:
        return 1.0, True
    return max(0.0, value), False


def soft_relaxation(loss: float, delta_term: float, m: int) -> float:
    """``L + sqrt(L Delta / m) + (Delta + sqrt(Delta) + 2) / m``."""
    return loss + math.sqrt(loss * delta_term / m) + (delta_term + math.sqrt(delta_term) + 2.0) / m


def smallkl_bound(loss: float, budget: float, m: int) -> float:
    """Invert ``kl(L + 1/m : bound - 1/m) <= budget`` for the bound."""
    q = min(1.0, loss + 1.0 / m)
    return kl_inverse_upper(q, budget) + 1.0 / m


def _l2_delta(R, gamma, delta, m, extra=0.0):
    return 2.0 * math.log(2.0 / delta) + 9.0 * (R / gamma) ** 2 * math.log(m) + extra


def _check_gamma(gamma):
    if not gamma > 0.0:
        raise PreconditionError(f"margin must be positive, got {gamma!r}")


def linear_l2_soft(profile, R: float, gamma: float, delta: float, m: int | None = None,
                   conservative: bool = False) -> BoundCertificate:
    """Soft-margin certificate for ``||w||_2 <= 1`` linear predictors."""
    m = _m_of(profile, m)
    _check_common(delta, m)
    _check_gamma(gamma)
    loss = _loss(profile, gamma, conservative)
    big_delta = _l2_delta(R, gamma, delta, m)
    bound, vac = _clamp(soft_relaxation(loss, big_delta, m))
    return BoundCertificate(bound, "linear_l2_soft", gamma, delta, m, loss, big_delta, 1.0 / m,
                            {"R": float(R)}, vac)


def linear_l2_smallkl(profile, R: float, gamma: float, delta: float, m: int | None = None,
                      conservative: bool = False) -> BoundCertificate:
    """The kl form behind :func:`linear_l2_soft`, inverted numerically."""
    m = _m_of(profile, m)
    _check_common(delta, m)
    _check_gamma(gamma)
    loss = _loss(profile, gamma, conservative)
    big_delta = _l2_delta(R, gamma, delta, m)
    budget = big_delta / (2.0 * m)
    bound, vac = _clamp(smallkl_bound(loss, budget, m))
    return BoundCertificate(bound, "linear_l2_smallkl", gamma, delta, m, loss, big_delta, 1.0 / m,
                            {"R": float(R), "kl_budget": budget}, vac)


def linear_l2_hard(profile: MarginProfile, R: float, delta: float, m: int | None = None) -> BoundCertificate:
    """Interpolating certificate at the hard margin (minimum sample margin)."""
    m = _m_of(profile, m)
    _check_common(delta, m)
    gamma_star = min_positive_margin(profile)
    complexity = 8.0 * (R / gamma_star) ** 2 * math.log(m)
    bound, vac = _clamp((complexity + math.log(1.0 / delta)) / m)
    return BoundCertificate(bound, "linear_l2_hard", gamma_star, delta, m, 0.0, complexity, 1.0 / m,
                            {"R": float(R)}, vac)


def linear_l1_soft(profile, R: float, K: int, gamma: float, delta: float, m: int | None = None,
                   conservative: bool = False) -> BoundCertificate:
    """Soft-margin certificate for ``||w||_1 <= 1`` over ``K`` features bounded by ``R`` in sup norm."""
    m = _m_of(profile, m)
    _check_common(delta, m)
    _check_gamma(gamma)
    if K < 1:
        raise PreconditionError("K must be a positive integer")
    loss = _loss(profile, gamma, conservative)
    big_delta = 2.0 * math.log(2.0 / delta) + 19.0 * (R / gamma) ** 2 * math.log(2 * K) * math.log(m)
    bound, vac = _clamp(soft_relaxation(loss, big_delta, m))
    return BoundCertificate(bound, "linear_l1_soft", gamma, delta, m, loss, big_delta, 1.0 / m,
                            {"R": float(R), "K": float(K)}, vac)


def linear_partial(profile, R: float, gamma: float, delta: float, m: int | None,
                   feature_kl: FeatureMapKl | float, conservative: bool = False) -> BoundCertificate:
    """Soft-margin certificate with a stochastic feature map of bounded norm."""
    kl = feature_kl.kl_value if isinstance(feature_kl, FeatureMapKl) else FeatureMapKl(float(feature_kl)).kl_value
    m = _m_of(profile, m)
    _check_common(delta, m)
    _check_gamma(gamma)
    loss = _loss(profile, gamma, conservative)
    big_delta = _l2_delta(R, gamma, delta, m, extra=2.0 * kl)
    bound, vac = _clamp(soft_relaxation(loss, big_delta, m))
    return BoundCertificate(bound, "linear_partial", gamma, delta, m, loss, big_delta, 1.0 / m,
                            {"R": float(R), "feature_kl": kl}, vac)


# --- SHEL -------------------------------------------------------------------


def _shel_norm_terms(model: ShelModel):
    v_inf = model.v_inf
    if not v_inf > 0.0:
        raise DegenerateError("V is identically zero")
    return v_inf, frobenius_sq(model.U - model.U0), frobenius_sq(model.V)


def shel_kl_budget(model: ShelModel, gamma: float, delta: float, m: int) -> tuple:
    """The covered kl budget ``B`` of the SHEL certificate (alpha = 2, m' = m).

    Returns ``(B, theta, T)`` where ``theta = gamma / (V_inf K)`` and
    ``T = ceil(16 log(m) / theta^2)``; ``B`` is ``inf`` when ``theta >= 1``.
    """
    v_inf, du_sq, v_sq = _shel_norm_terms(model)
    K = model.width
    scale = v_inf * K / gamma
    theta = gamma / (v_inf * K)
    if not scale > 1.0:
        return math.inf, theta, 0
    norm_term = du_sq / (2 * K) + (v_sq / (v_inf * v_inf * K)) * math.log(2.0)
    logm = math.log(m)
    first = 17.0 * (2.0 * scale) ** 2 * norm_term * logm
    cover = 2.0 * math.log(math.log(4.0 * scale) / math.log(2.0))
    budget = (first + math.log(4.0 * math.sqrt(m) / delta) + cover) / m
    T = math.ceil(16.0 * logm / (theta * theta))
    return budget, theta, T


def shel_certificate(model: ShelModel, profile, gamma: float, delta: float, m: int | None = None,
                     conservative: bool = False) -> BoundCertificate:
    """Multiclass SHEL certificate, relaxed with Pinsker's inequality."""
    m = _m_of(profile, m)
    _check_common(delta, m)
    _check_gamma(gamma)
    loss = _loss(profile, gamma, conservative)
    budget, theta, T = shel_kl_budget(model, gamma, delta, m)
    vacuous = math.isinf(budget)
    value = math.inf if vacuous else loss + 2.0 / m + math.sqrt(budget / 2.0)
    bound, vac = _clamp(value, vacuous)
    return BoundCertificate(bound, "shel", gamma, delta, m, loss, budget, 1.0 / m,
                            {"alpha": 2.0, "theta": theta, "T": float(T), "K": float(model.width),
                             "V_inf": model.v_inf}, vac)


def shel_complexity(model: ShelModel, gamma: float, m: int) -> float:
    """``sqrt(K) / (gamma sqrt(m)) * (V_inf ||U - U0||_F + ||V||_F)``."""
    if not gamma > 0 or m < 1:
        raise DomainError("need gamma > 0 and m >= 1")
    K = model.width
    v_inf = float(np.max(np.abs(model.V))) if model.V.size else 0.0
    du_sq = frobenius_sq(model.U - model.U0)
    v_sq = frobenius_sq(model.V)
    # sqrt(K * norm^2) keeps unit duplication an exact invariance
    return (v_inf * math.sqrt(K * du_sq) + math.sqrt(K * v_sq)) / (gamma * math.sqrt(m))


def _signed_mixture(model: ShelModel):
    v = model.V
    l1 = math.fsum(np.abs(v).tolist())
    if not l1 > 0.0:
        raise DegenerateError("||v||_1 is zero")
    p = np.concatenate([np.maximum(v, 0.0), np.maximum(-v, 0.0)]) / l1
    p = p / p.sum()
    return l1, p


def shel_binary_kl_budget(model: ShelModel, gamma: float, delta: float, m: int) -> tuple:
    """Covered kl budget of the L1 (binary) SHEL certificate.

    Returns ``(budget, mixture_kl)``; the budget is ``inf`` when
    ``gamma > ||v||_1``.
    """
    if not model.binary:
        raise DomainError("the L1 SHEL certificate needs a binary model with weight vector v")
    l1, p = _signed_mixture(model)
    K = model.width
    drift = np.sum((model.U - model.U0) ** 2, axis=1)
    weights = np.abs(model.V) / l1
    mixture_kl = math.log(2 * K) - categorical_entropy(p) + 0.5 * math.fsum((weights * drift).tolist())
    mixture_kl = max(mixture_kl, 0.0)
    if gamma / l1 > 1.0:
        return math.inf, mixture_kl
    ratio = l1 / gamma
    budget = ((32.0 * ratio ** 2 * math.log(m) + 1.0) * mixture_kl
              + math.log(2.0 / delta) + 2.0 * math.log(math.log2(4.0 * ratio))) / m
    return budget, mixture_kl


def shel_binary_certificate(model: ShelModel, profile, gamma: float, delta: float, m: int | None = None,
                            conservative: bool = False) -> BoundCertificate:
    """Binary SHEL certificate with the L1-normalised output margin."""
    m = _m_of(profile, m)
    _check_common(delta, m)
    _check_gamma(gamma)
    loss = _loss(profile, gamma, conservative)
    budget, mixture_kl = shel_binary_kl_budget(model, gamma, delta, m)
    vacuous = math.isinf(budget)
    value = math.inf if vacuous else loss + 2.0 / m + math.sqrt(budget / 2.0)
    bound, vac = _clamp(value, vacuous)
    l1 = math.fsum(np.abs(model.V).tolist())
    eps = gamma / l1
    T = math.ceil(8.0 * math.log(m) / eps ** 2) if not vacuous else 0
    return BoundCertificate(bound, "shel_binary", gamma, delta, m, loss, budget, 1.0 / m,
                            {"v_l1": l1, "epsilon_margin": eps, "mixture_kl": mixture_kl,
                             "T": float(T), "K": float(model.width)}, vac)


# --- deep ReLU --------------------------------------------------------------


def relu_inverse_variances(spectral: list, R: float, theta: float, m: int, h: int) -> list:
    """``1/sigma_i^2 = 32 h (e R prod_j ||W_j|| / (theta ||W_i||))^2 log(m h d)``."""
    d = len(spectral)
    prod = math.prod(spectral)
    log_term = math.log(m * h * d)
    return [32.0 * h * (math.e * R * prod / (theta * s)) ** 2 * log_term for s in spectral]


def relu_certificate(model: ReluModel, profile, theta: float, delta: float, m: int | None = None,
                     w_star: float | None = None, conservative: bool = False) -> BoundCertificate:
    """Deep ReLU certificate with Gaussian perturbations and union-bound covers."""
    m = _m_of(profile, m)
    _check_common(delta, m, min_m=2)
    _check_gamma(theta)
    spectral = [spectral_norm(w) for w in model.layers]
    from_model = w_star is None
    if from_model:
        w_star = max(spectral)
    for i, s in enumerate(spectral):
        if s > w_star * (1.0 + 1e-12):
            raise PreconditionError(f"layer {i}: spectral norm {s!r} exceeds W_star = {w_star!r}")
    loss = _loss(profile, theta, conservative)
    d = model.depth
    h = model.max_units
    R = model.R
    c_theta = R * math.prod(spectral)
    params = {"C_theta": c_theta, "W_star": float(w_star), "W_star_from_model": float(from_model),
              "h": float(h), "d": float(d)}
    if not theta < c_theta:
        return BoundCertificate(1.0, "relu", theta, delta, m, loss, math.inf, 2.0 / m, params, True)
    inv_var = relu_inverse_variances(spectral, R, theta, m, h)
    sigmas = [1.0 / math.sqrt(v) for v in inv_var]
    c_sigma = 15.0 * w_star ** 2 / math.sqrt(h)
    params["C_sigma"] = c_sigma
    for i, s in enumerate(sigmas):
        params[f"sigma_{i + 1}"] = s
    main = 4.0 * math.fsum(frobenius_sq(w - w0) * iv for w, w0, iv in zip(model.layers, model.priors, inv_var))
    theta_arg = math.log2(4.0 * c_theta / theta)
    sigma_args = [math.log2(4.0 * c_sigma / s) for s in sigmas]
    params["main_term"] = main
    if theta_arg <= 1.0 or any(a <= 1.0 for a in sigma_args):
        return BoundCertificate(1.0, "relu", theta, delta, m, loss, math.inf, 2.0 / m, params, True)
    theta_cover = 2.0 * math.log(theta_arg)
    params["theta_cover"] = theta_cover
    inner = (main + math.log(2.0 * (d + 1) * math.sqrt(m) / delta) + theta_cover
             + math.fsum(2.0 * math.log(a) for a in sigma_args))
    bound, vac = _clamp(loss + 2.0 / m + math.sqrt(inner / (2.0 * m)))
    return BoundCertificate(bound, "relu", theta, delta, m, loss, inner, 2.0 / m, params, vac)
