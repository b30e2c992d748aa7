"""Per-window features N, A, F, V and their fused score.

With ``old`` / ``new`` the numbers of distinct window sources inside / outside
the trained old-user set, ``max_old`` the trained per-window maximum of old
users and ``mean_new`` the trained mean of new users per window:

    N = old / (max_old + 1) - 1
    A = (new - mean_new) / mean_new
    F = new / (max_old + 1)          (or -1 / (max_old + 1) when new == 0)
    V = packets from new sources / (new * unit_time)
    NAFV = -N * A * F * V

Normal traffic keeps NAFV near zero, a flood drives it far above +1 and a
flash crowd (old and new users surging at ordinary rates) far below -1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, Protocol, Sequence

import numpy as np

if TYPE_CHECKING:
    from .baseline import Baseline
    from .prefilter import SourceTable

A_CAP = 1e6


class WeightConfigError(ValueError):
    pass


class HasAccessCounts(Protocol):
    access_counts: Mapping[int, int]


@dataclass(frozen=True)
class FeatureVector:
    n: float
    a: float
    f: float
    v: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.n, self.a, self.f, self.v)


@dataclass(frozen=True)
class WeightVector:
    w1: float = 0.25
    w2: float = 0.25
    w3: float = 0.25
    w4: float = 0.25

    def __post_init__(self):
        ws = self.as_tuple()
        if any(not math.isfinite(w) or w < 0 for w in ws):
            raise WeightConfigError(f"weights must be finite and non-negative, got {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise WeightConfigError(f"weights must sum to 1, got {sum(ws)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4)

    @property
    def scale(self) -> float:
        return self.w1 * self.w2 * self.w3 * self.w4

    @classmethod
    def parse(cls, text: str) -> "WeightVector":
        parts = [p for p in text.split(",") if p.strip()]
        if len(parts) != 4:
            raise WeightConfigError(f"expected four comma-separated weights, got {text!r}")
        try:
            return cls(*(float(p) for p in parts))
        except ValueError as exc:
            if isinstance(exc, WeightConfigError):
                raise
            raise WeightConfigError(f"bad weight list {text!r}") from exc


EQUAL_WEIGHTS = WeightVector()


@dataclass(frozen=True)
class NafvPoint:
    k: int
    value: float
    features: FeatureVector
    start: float = 0.0
    weighted: float | None = None


def split_users(window: HasAccessCounts, baseline: "Baseline") -> tuple[int, int, int]:
    """Return (old-user count, new-user count, packets sent by new users)."""
    ipd = baseline.old_users
    old = new = new_packets = 0
    for src, count in window.access_counts.items():
        if ipd.is_marked(src):
            old += 1
        else:
            new += 1
            new_packets += count
    return old, new, new_packets


def _n(old: float, max_old: float) -> float:
    return old / (max_old + 1) - 1


def _a(new: float, mean_new: float, cap: float) -> float:
    if mean_new > 0:
        return (new - mean_new) / mean_new
    return 0.0 if new == 0 else cap


def _f(new: float, max_old: float) -> float:
    return new / (max_old + 1) if new != 0 else -1 / (max_old + 1)


def _v(new: float, new_packets: float, unit_time: float) -> float:
    return new_packets / (new * unit_time) if new else 0.0


def feature_n(window: HasAccessCounts, baseline: "Baseline") -> float:
    old, _, _ = split_users(window, baseline)
    return _n(old, baseline.max_old_users)


def feature_a(window: HasAccessCounts, baseline: "Baseline", cap: float = A_CAP) -> float:
    _, new, _ = split_users(window, baseline)
    return _a(new, baseline.mean_new_users, cap)


def feature_f(window: HasAccessCounts, baseline: "Baseline") -> float:
    _, new, _ = split_users(window, baseline)
    return _f(new, baseline.max_old_users)


def feature_v(window: HasAccessCounts, baseline: "Baseline") -> float:
    _, new, new_packets = split_users(window, baseline)
    return _v(new, new_packets, baseline.unit_time)


def features(window: HasAccessCounts, baseline: "Baseline", cap: float = A_CAP) -> FeatureVector:
    old, new, new_packets = split_users(window, baseline)
    return FeatureVector(
        _n(old, baseline.max_old_users),
        _a(new, baseline.mean_new_users, cap),
        _f(new, baseline.max_old_users),
        _v(new, new_packets, baseline.unit_time),
    )


def nafv(fv: FeatureVector) -> float:
    return -(fv.n * fv.a * fv.f * fv.v)


def check_weights(weights: WeightVector, strict: bool = True) -> None:
    """Reject (or warn about) weights with a zero entry, which zero every score."""
    if any(w == 0 for w in weights.as_tuple()):
        msg = f"weights {weights.as_tuple()} contain a zero; every weighted score collapses to 0"
        if strict:
            raise WeightConfigError(msg)
        warnings.warn(msg)


def nafv_weighted(fv: FeatureVector, weights: WeightVector, strict: bool = True) -> float:
    check_weights(weights, strict)
    w1, w2, w3, w4 = weights.as_tuple()
    return -((w1 * fv.n) * (w2 * fv.a) * (w3 * fv.f) * (w4 * fv.v))


def score_window(
    window: HasAccessCounts, baseline: "Baseline", k: int | None = None, start: float | None = None
) -> NafvPoint:
    fv = features(window, baseline)
    return NafvPoint(
        k=getattr(window, "index", 0) if k is None else k,
        value=nafv(fv),
        features=fv,
        start=getattr(window, "start", 0.0) if start is None else start,
        weighted=nafv_weighted(fv, baseline.weights, strict=False),
    )


def pca_weights(rows: Sequence[FeatureVector] | np.ndarray) -> WeightVector:
    """Weights from the first principal component of the standardised features.

    Loadings are taken in absolute value and normalised to sum to one. Falls
    back to equal weights when the leading component is not well defined
    (constant columns, rank deficiency, or a tied top eigenvalue).
    """
    x = np.array([r.as_tuple() if isinstance(r, FeatureVector) else r for r in rows], dtype=float)
    if x.ndim != 2 or x.shape[1] != 4 or x.shape[0] < 4:
        raise ValueError("pca_weights needs at least 4 rows of 4 features")
    if not np.isfinite(x).all():
        warnings.warn("non-finite feature values; using equal weights")
        return EQUAL_WEIGHTS
    sd = x.std(axis=0)
    if (sd <= 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))).any():
        warnings.warn("constant feature column; using equal weights")
        return EQUAL_WEIGHTS
    z = (x - x.mean(axis=0)) / sd
    corr = z.T @ z / x.shape[0]
    evals, evecs = np.linalg.eigh(corr)
    if evals[0] <= 1e-10 * evals[-1]:
        warnings.warn("rank-deficient feature matrix; using equal weights")
        return EQUAL_WEIGHTS
    if evals[-1] - evals[-2] <= 1e-9 * evals[-1]:
        warnings.warn("leading principal component is not unique; using equal weights")
        return EQUAL_WEIGHTS
    loadings = np.abs(evecs[:, -1])
    w = loadings / loadings.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return WeightVector(*(float(v) for v in w))


# -- columnar path ------------------------------------------------------------


@dataclass(frozen=True)
class FeatureTable:
    k: np.ndarray
    n: np.ndarray
    a: np.ndarray
    f: np.ndarray
    v: np.ndarray
    nafv: np.ndarray
    weighted: np.ndarray
    old: np.ndarray
    new: np.ndarray

    def __len__(self) -> int:
        return int(self.k.size)

    def rows(self) -> np.ndarray:
        return np.column_stack([self.n, self.a, self.f, self.v])

    def points(self, unit_time: float) -> list[NafvPoint]:
        return [
            NafvPoint(int(k), float(s), FeatureVector(float(n), float(a), float(f), float(v)), k * unit_time, float(w))
            for k, n, a, f, v, s, w in zip(
                self.k.tolist(), self.n.tolist(), self.a.tolist(), self.f.tolist(),
                self.v.tolist(), self.nafv.tolist(), self.weighted.tolist(),
            )
        ]


def feature_arrays(
    old: np.ndarray,
    new: np.ndarray,
    new_packets: np.ndarray,
    max_old: float | np.ndarray,
    mean_new: float | np.ndarray,
    unit_time: float,
    cap: float = A_CAP,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised N, A, F, V; the baseline statistics may vary per window."""
    old, new, new_packets = (np.asarray(x, dtype=float) for x in (old, new, new_packets))
    max_old = np.broadcast_to(np.asarray(max_old, dtype=float), old.shape)
    mean_new = np.broadcast_to(np.asarray(mean_new, dtype=float), old.shape)
    n = old / (max_old + 1) - 1
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(mean_new > 0, (new - mean_new) / np.where(mean_new > 0, mean_new, 1.0),
                     np.where(new == 0, 0.0, cap))
        v = np.where(new > 0, new_packets / (np.maximum(new, 1) * unit_time), 0.0)
    f = np.where(new != 0, new / (max_old + 1), -1 / (max_old + 1))
    return n, a, f, v


def feature_table(st: "SourceTable", baseline: "Baseline", cap: float = A_CAP) -> FeatureTable:
    n_windows = st.n_windows
    is_old = baseline.old_users.contains_many(st.src)
    k = st.k.astype(np.intp)
    old = np.bincount(k, weights=is_old, minlength=n_windows)
    new = np.bincount(k, weights=~is_old, minlength=n_windows)
    new_packets = np.bincount(k, weights=np.where(is_old, 0, st.count), minlength=n_windows)

    n, a, f, v = feature_arrays(
        old, new, new_packets, float(baseline.max_old_users), float(baseline.mean_new_users), baseline.unit_time, cap
    )
    score = -(n * a * f * v)
    w1, w2, w3, w4 = baseline.weights.as_tuple()
    weighted = -((w1 * n) * (w2 * a) * (w3 * f) * (w4 * v))
    return FeatureTable(
        np.arange(n_windows), n, a, f, v, score, weighted, old.astype(np.int64), new.astype(np.int64)
    )
