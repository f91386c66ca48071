"""Scalar and matrix numerics shared by every certificate.

Everything here is a pure function. Rates are plain floats in [0, 1]; the
functions that are used on whole grids (``bernoulli_kl``, ``erf``,
``entropy_pm1``) also accept numpy arrays and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "ParseError",
    "KlPair",
    "MatrixNorms",
    "bernoulli_kl",
    "kl_inverse_upper",
    "phi_c",
    "phi_c_inverse",
    "erf",
    "entropy_pm1",
    "categorical_entropy",
    "spectral_norm",
    "frobenius_sq",
    "matrix_norms",
]

class DomainError(ValueError):
    """An argument lies outside the domain of a numerical routine."""


class ParseError(DomainError):
    """Malformed input; ``offset`` is the byte (or line) where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


def _as_rate(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {x!r}")
    return arr


def _scalar_or_array(arr):
    return float(arr) if arr.ndim == 0 else arr


@dataclass(frozen=True)
class KlPair:
    """An (empirical, population) pair of rates."""

    q: float
    p: float

    def __post_init__(self):
        _as_rate(self.q, "q")
        _as_rate(self.p, "p")

    @property
    def kl(self) -> float:
        return bernoulli_kl(self.q, self.p)


@dataclass(frozen=True)
class MatrixNorms:
    spectral: float
    frobenius: float
    l1: float
    linf: float


def bernoulli_kl(q, p):
    """One-sided binary relative entropy kl(q : p).

    Returns ``q log(q/p) + (1-q) log((1-q)/(1-p))`` when ``p >= q`` and 0
    otherwise, with ``0 log 0 = 0``. ``kl(q : 1)`` is ``inf`` for ``q < 1``.
    """
    q = _as_rate(q, "q")
    p = _as_rate(p, "p")
    q, p = np.broadcast_arrays(q, p)
    out = np.zeros(q.shape, dtype=float)
    active = p > q
    if np.any(active):
        qa = q[active]
        pa = p[active]
        diff = pa - qa
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = qa / pa
            # log1p keeps precision near p = q; the log difference survives q/p underflow
            log_ratio = np.where(ratio < 0.5, np.log(qa) - np.log(pa), np.log1p(-diff / pa))
            first = np.where(qa > 0.0, qa * log_ratio, 0.0)
            second = np.where(
                pa < 1.0,
                (1.0 - qa) * np.log1p(diff / np.where(pa < 1.0, 1.0 - pa, 1.0)),
                np.inf,
            )
        out[active] = first + second
    return _scalar_or_array(out)


def kl_inverse_upper(q: float, budget: float) -> float:
    """Largest ``p`` in ``[q, 1]`` with ``bernoulli_kl(q, p) <= budget``.

    Bisection; the returned value is the upper end of the final bracket, so
    it never under-reports the supremum. Iterates until the bracket is at
    most 1e-10 wide and cannot be split further in floating point, capped at
    200 halvings.
    """
    q = float(_as_rate(q, "q"))
    budget = float(budget)
    if not budget >= 0.0:
        raise DomainError(f"budget must be nonnegative, got {budget!r}")
    if budget == 0.0 or q == 1.0:
        return q
    if math.isinf(budget):
        return 1.0
    lo, hi = q, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if bernoulli_kl(q, mid) <= budget:
            lo = mid
        else:
            hi = mid
    return hi


def phi_c(p: float, c: float) -> float:
    """``-log(1 - p + p e^{-C}) / C``, the Catoni transform of a rate."""
    if not c > 0:
        raise DomainError(f"c must be positive, got {c!r}")
    p = float(_as_rate(p, "p"))
    return min(1.0, -math.log1p(p * math.expm1(-c)) / c)


def phi_c_inverse(t: float, c: float) -> float:
    """Inverse of :func:`phi_c`: ``(1 - e^{-Ct}) / (1 - e^{-C})``."""
    if not c > 0:
        raise DomainError(f"c must be positive, got {c!r}")
    t = float(_as_rate(t, "t"))
    return min(1.0, math.expm1(-c * t) / math.expm1(-c))


def erf(x):
    """Error function, scalar in, scalar out; arrays broadcast.

    Delegates to ``scipy.special.erf`` (Cephes rational approximations,
    independent of the platform libm).
    """
    arr = np.asarray(x, dtype=float)
    return _scalar_or_array(np.asarray(special.erf(arr)))


def entropy_pm1(x):
    """KL divergence of a +-1 variable with mean ``x`` from the fair coin.

    ``h(x) = ((1+x) log(1+x) + (1-x) log(1-x)) / 2``.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) > 1.0):
        raise DomainError(f"entropy_pm1 needs |x| <= 1, got {x!r}")
    a = np.abs(arr)
    with np.errstate(divide="ignore", invalid="ignore"):
        plus = (1.0 + a) * np.log1p(a)
        minus = np.where(a < 1.0, (1.0 - a) * np.log1p(-np.where(a < 1.0, a, 0.0)), 0.0)
    return _scalar_or_array(0.5 * (plus + minus))


def categorical_entropy(p) -> float:
    """Shannon entropy (nats) of a probability vector."""
    p = np.asarray(p, dtype=float).ravel()
    if p.size == 0 or np.any(~np.isfinite(p)) or np.any(p < 0.0):
        raise DomainError("probability vector must be nonempty and nonnegative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"probability vector sums to {p.sum()!r}, not 1")
    nz = p[p > 0.0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


def frobenius_sq(w) -> float:
    """Squared Frobenius norm, summed with ``math.fsum`` (exactly rounded).

    Exact rounding makes the certificate invariances (unit duplication,
    power-of-two rescaling) hold bit-for-bit.
    """
    w = np.asarray(w, dtype=float)
    return math.fsum(np.square(w).ravel().tolist())


def spectral_norm(w, tol: float = 1e-10, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value by power iteration on the Gram matrix.

    Converged when the Gram residual ``||G v - lambda v||`` drops below
    ``tol * lambda``. If the cap is hit, the iteration restarts once from a
    perturbed vector and the larger Rayleigh quotient wins.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[None, :]
    if w.ndim != 2 or w.size == 0:
        raise DomainError("spectral_norm needs a nonempty matrix")
    if not np.all(np.isfinite(w)):
        raise DomainError("spectral_norm needs finite entries")
    if w.shape[0] < w.shape[1]:
        w = w.T
    if not np.any(w):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(w.shape[1])
    v /= np.linalg.norm(v)

    def iterate(v):
        lam = 0.0
        for _ in range(max_iter):
            g = w.T @ (w @ v)
            lam = float(v @ g)
            norm_g = float(np.linalg.norm(g))
            if norm_g == 0.0:
                return 0.0, v, True
            if np.linalg.norm(g - lam * v) <= tol * lam:
                return lam, v, True
            v = g / norm_g
        return lam, v, False

    lam, v, ok = iterate(v)
    if not ok:
        v2 = v + 1e-3 * rng.standard_normal(v.shape)
        lam2, _, _ = iterate(v2 / np.linalg.norm(v2))
        lam = max(lam, lam2)
    return math.sqrt(max(lam, 0.0))


def matrix_norms(w) -> MatrixNorms:
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[None, :]
    return MatrixNorms(
        spectral=spectral_norm(w),
        frobenius=math.sqrt(frobenius_sq(w)),
        l1=float(np.sum(np.abs(w))),
        linf=float(np.max(np.abs(w))) if w.size else 0.0,
    )
