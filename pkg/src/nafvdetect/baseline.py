"""Training baseline: the old-user set and its summary statistics.

Training walks a normal stream window by window. The first window seeds the
old-user set and sets the old-user maximum to its source count; every later
window is compared against the set *before* its own sources are merged:

    old_k      = |sources_k ∩ O'|
    max_old    = max(max_old, old_k)
    new_k      = |sources_k| - old_k
    mean_new   = mean(new_k for k >= 2)

The first window is left out of the new-user mean because every source in it
is new by construction. After training the set is frozen; detection only
reads it.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .features import A_CAP, EQUAL_WEIGHTS, WeightVector, feature_arrays
from .ipd import IpBitmap, IpdCorruptError, IpdFormatError
from .prefilter import SourceTable

FORMAT = "nafv-baseline/1"


class TrainingError(ValueError):
    pass


class BaselineVersionError(ValueError):
    pass


class BaselineCorruptError(ValueError):
    pass


class HasAccessCounts(Protocol):
    access_counts: Mapping[int, int]


@dataclass
class Baseline:
    old_users: IpBitmap
    max_old_users: int
    mean_new_users: float
    unit_time: float
    window_count: int
    weights: WeightVector = field(default=EQUAL_WEIGHTS)
    filtered: bool = True

    def with_weights(self, weights: WeightVector) -> "Baseline":
        return replace(self, weights=weights)

    def header(self, ipd_name: str) -> dict:
        return {
            "format": FORMAT,
            "unit_time": self.unit_time,
            "max_old_users": self.max_old_users,
            "mean_new_users": self.mean_new_users,
            "weights": list(self.weights.as_tuple()),
            "window_count": self.window_count,
            "filtered": self.filtered,
            "ipd": ipd_name,
        }


def train(
    windows: Sequence[HasAccessCounts],
    unit_time: float,
    bits: int = 32,
    weights: WeightVector = EQUAL_WEIGHTS,
    filtered: bool = True,
) -> Baseline:
    """Reference trainer over per-window access-count maps, one window at a time."""
    if not windows:
        raise TrainingError("training needs at least one window")
    ipd = IpBitmap(bits)
    max_old = 0
    new_total = 0
    for i, window in enumerate(windows):
        sources = list(window.access_counts)
        if i == 0:
            max_old = len(sources)
        else:
            old = sum(1 for s in sources if ipd.is_marked(s))
            max_old = max(max_old, old)
            new_total += len(sources) - old
        for s in sources:
            ipd.mark(s)
    mean_new = new_total / (len(windows) - 1) if len(windows) > 1 else 0.0
    return Baseline(ipd.freeze(), max_old, mean_new, unit_time, len(windows), weights, filtered)


def train_table(
    st: SourceTable,
    unit_time: float,
    bits: int = 32,
    weights: WeightVector = EQUAL_WEIGHTS,
    filtered: bool = True,
) -> Baseline:
    """Vectorised trainer; same results as :func:`train` on the same windows.

    A source is old in window k exactly when its bitmap slot was first hit in
    an earlier window, so first-appearance indices replace the sequential walk.
    """
    n_windows = st.n_windows
    if n_windows < 1:
        raise TrainingError("training needs at least one window")
    ipd = IpBitmap(bits)
    slots = ipd.index_many(st.src)
    k = st.k.astype(np.intp)
    # rows are sorted by k, so np.unique's first index is the earliest window
    is_old = _old_at_arrival(slots, k)

    distinct, old, _ = _window_counts(st, is_old)
    max_old = int(distinct[0])
    if n_windows > 1:
        max_old = max(max_old, int(old[1:].max()))
        mean_new = float((distinct[1:] - old[1:]).sum()) / (n_windows - 1)
    else:
        mean_new = 0.0
    ipd.mark_many(st.src)
    return Baseline(ipd.freeze(), max_old, mean_new, unit_time, n_windows, weights, filtered)


def _old_at_arrival(slots: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Whether each (window, source) row was already in O' when its window arrived."""
    # rows are sorted by k, so np.unique's first index is the earliest window
    _, first_idx, inverse = np.unique(slots, return_index=True, return_inverse=True)
    return k[first_idx][inverse] < k


def _window_counts(st: SourceTable, is_old: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-window distinct sources, old sources and packets sent by new sources."""
    k = st.k.astype(np.intp)
    distinct = np.bincount(k, minlength=st.n_windows)
    old = np.bincount(k, weights=is_old, minlength=st.n_windows).astype(np.int64)
    new_packets = np.bincount(k, weights=np.where(is_old, 0, st.count), minlength=st.n_windows)
    return distinct, old, new_packets


def prequential_features(st: SourceTable, unit_time: float, bits: int = 32, cap: float = A_CAP) -> np.ndarray:
    """Feature rows for training windows 3..k, each scored against the state built from earlier windows.

    Replaying training traffic through the finished baseline makes every
    source old, so N is the only feature that moves. Scoring each window
    against the running O', O'_max and mean before it is merged gives rows
    in which all four features vary; these feed the PCA weighting.
    """
    if st.n_windows < 3:
        return np.zeros((0, 4))
    slots = IpBitmap(bits).index_many(st.src)
    k = st.k.astype(np.intp)
    distinct, old, new_packets = _window_counts(st, _old_at_arrival(slots, k))
    new = distinct - old
    # state before window j: max over window 0's size and old counts of 1..j-1,
    # mean new count over windows 1..j-1
    running_max = np.maximum.accumulate(np.concatenate(([distinct[0]], old[1:])))
    running_mean = np.cumsum(new[1:]) / np.arange(1, st.n_windows)
    j = np.arange(2, st.n_windows)
    n, a, f, v = feature_arrays(old[j], new[j], new_packets[j], running_max[j - 1], running_mean[j - 2], unit_time, cap)
    return np.column_stack([n, a, f, v])


def save(baseline: Baseline, path: str | os.PathLike) -> Path:
    """Write the JSON header to ``path`` and the bitmap next to it (``.ipd``)."""
    path = Path(path)
    ipd_path = path.with_suffix(".ipd")
    baseline.old_users.save(ipd_path)
    path.write_text(json.dumps(baseline.header(ipd_path.name), indent=2) + "\n")
    return ipd_path


def load(path: str | os.PathLike) -> Baseline:
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except OSError as exc:
        raise BaselineCorruptError(f"cannot read baseline {path}: {exc}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BaselineCorruptError(f"baseline {path} is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise BaselineCorruptError(f"baseline {path} is not a JSON object")
    if header.get("format") != FORMAT:
        raise BaselineVersionError(f"baseline {path} has format {header.get('format')!r}, expected {FORMAT!r}")
    try:
        ipd = IpBitmap.load(path.parent / header["ipd"])
        baseline = Baseline(
            old_users=ipd.freeze(),
            max_old_users=int(header["max_old_users"]),
            mean_new_users=float(header["mean_new_users"]),
            unit_time=float(header["unit_time"]),
            window_count=int(header["window_count"]),
            weights=WeightVector(*header["weights"]),
            filtered=bool(header.get("filtered", True)),
        )
    except IpdFormatError as exc:
        raise BaselineVersionError(str(exc)) from exc
    except IpdCorruptError as exc:
        raise BaselineCorruptError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise BaselineCorruptError(f"baseline {path} is missing or has bad fields: {exc}") from exc
    if baseline.window_count < 1 or baseline.mean_new_users < 0 or baseline.max_old_users < 0:
        raise BaselineCorruptError(f"baseline {path} has out-of-range statistics")
    return baseline
