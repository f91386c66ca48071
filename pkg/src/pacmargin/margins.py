"""Margins, empirical margin losses and margin quantiles."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import DomainError

__all__ = [
    "MarginError",
    "MarginProfile",
    "multiclass_margin",
    "multiclass_margins",
    "binary_margin",
    "empirical_margin_loss",
    "margin_for_target_loss",
    "min_positive_margin",
]


class MarginError(ValueError):
    """A requested margin does not exist for the given sample.

    ``kind`` is ``"margin-unachievable"`` or ``"no-hard-margin"``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass(frozen=True)
class MarginProfile:
    """Sorted sample margins of one model on one dataset."""

    margins: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.margins, dtype=float).ravel())
        if arr.size == 0:
            raise DomainError("a margin profile needs at least one sample")
        if np.any(np.isnan(arr)):
            raise DomainError("margins must not be NaN")
        arr.setflags(write=False)
        object.__setattr__(self, "margins", arr)

    @property
    def m(self) -> int:
        return int(self.margins.size)

    @classmethod
    def from_scores(cls, scores, labels) -> "MarginProfile":
        """Build from raw model scores.

        1-D scores with labels in {+1, -1} use the binary margin ``y f(x)``;
        2-D scores use the multiclass margin with 0-based class labels.
        """
        scores = np.asarray(scores, dtype=float)
        labels = np.asarray(labels)
        if scores.ndim == 1:
            return cls(binary_margin(scores, labels))
        return cls(multiclass_margins(scores, labels))

    def scaled(self, theta: float) -> "MarginProfile":
        return MarginProfile(self.margins * theta)

    def loss(self, gamma: float, conservative: bool = False) -> float:
        return empirical_margin_loss(self, gamma, conservative)


def multiclass_margin(scores, label: int) -> float:
    """``f(x)[y] - max_{y' != y} f(x)[y']`` with a 0-based ``label``."""
    scores = np.asarray(scores, dtype=float).ravel()
    c = scores.size
    if c < 2:
        raise DomainError("multiclass margin needs at least two scores")
    if not 0 <= int(label) < c or int(label) != label:
        raise DomainError(f"label {label!r} out of range for {c} classes")
    label = int(label)
    others = np.delete(scores, label)
    return float(scores[label] - others.max())


def multiclass_margins(scores, labels) -> np.ndarray:
    """Row-wise multiclass margins for an ``(n, c)`` score matrix."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n, c = scores.shape
    if c < 2:
        raise DomainError("multiclass margin needs at least two scores")
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= c):
        raise DomainError("labels must be 0-based class indices, one per row")
    labels = labels.astype(np.int64)
    rows = np.arange(n)
    own = scores[rows, labels]
    rest = scores.copy()
    rest[rows, labels] = -np.inf
    return own - rest.max(axis=1)


def binary_margin(scores, labels):
    """``y f(x)`` for labels in {+1, -1}."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise DomainError("binary labels must be +1 or -1")
    out = labels * scores
    return float(out) if out.ndim == 0 else out


def empirical_margin_loss(profile: MarginProfile, gamma: float, conservative: bool = False) -> float:
    """Fraction of margins strictly below ``gamma`` (``<=`` if conservative)."""
    side = "right" if conservative else "left"
    count = np.searchsorted(profile.margins, gamma, side=side)
    return int(count) / profile.m


def margin_for_target_loss(profile: MarginProfile, target: float) -> float:
    """The ``(floor(target*m) + 1)``-th smallest margin.

    At the returned gamma the strict empirical margin loss is at most
    ``target``.
    """
    if not 0.0 <= target < 1.0:
        raise DomainError(f"target must lie in [0, 1), got {target!r}")
    index = math.floor(target * profile.m)
    if index >= profile.m:
        raise MarginError("margin-unachievable", "not enough samples for the target")
    gamma = float(profile.margins[index])
    if gamma <= 0.0:
        raise MarginError(
            "margin-unachievable",
            f"order statistic {index + 1} is {gamma!r}; model too inaccurate for target {target}",
        )
    return gamma


def min_positive_margin(profile: MarginProfile) -> float:
    """Smallest sample margin, provided every margin is positive."""
    gamma = float(profile.margins[0])
    if gamma <= 0.0:
        raise MarginError("no-hard-margin", f"minimum margin is {gamma!r}")
    return gamma
