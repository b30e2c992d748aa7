"""End-to-end stages over columnar flow tables, plus artifact I/O."""
from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .baseline import Baseline, prequential_features, train_table
from .detector import EVENT_FORMAT, DetectionEvent, DetectorConfig, EventKind, StateSnapshot, TrendService, run
from .features import EQUAL_WEIGHTS, FeatureTable, WeightVector, feature_table, pca_weights
from .ingest import FlowTable, SamplingConfig
from .prefilter import SourceTable, classify_table, delete_rules_table, source_table

FEATURE_COLUMNS = ("k", "start", "n", "a", "f", "v", "nafv", "nafv_weighted")


def source_counts(table: FlowTable, unit_time: float, filtered: bool = True, n_windows: int | None = None) -> SourceTable:
    cfg = SamplingConfig(unit_time)
    k = table.window_index(cfg)
    if n_windows is None:
        n_windows = table.n_windows(cfg)
    elif k.size and int(k.max()) >= n_windows:
        raise ValueError(f"records extend past the requested {n_windows} windows")
    ct = classify_table(k, table.src, table.dst, n_windows)
    if filtered:
        ct = delete_rules_table(ct)
    return source_table(ct)


def train_baseline(
    table: FlowTable,
    unit_time: float,
    filtered: bool = True,
    weights: str | WeightVector = "equal",
    bits: int = 32,
) -> Baseline:
    st = source_counts(table, unit_time, filtered)
    baseline = train_table(st, unit_time, bits=bits, filtered=filtered)
    if isinstance(weights, WeightVector):
        return baseline.with_weights(weights)
    if weights == "equal":
        return baseline.with_weights(EQUAL_WEIGHTS)
    if weights == "pca":
        rows = prequential_features(st, unit_time, bits)
        if rows.shape[0] < 4:
            warnings.warn("fewer than 4 scored training windows; using equal weights")
            return baseline
        return baseline.with_weights(pca_weights(rows))
    raise ValueError(f"unknown weight mode {weights!r}")


def score(table: FlowTable, baseline: Baseline, n_windows: int | None = None) -> FeatureTable:
    st = source_counts(table, baseline.unit_time, baseline.filtered, n_windows)
    return feature_table(st, baseline)


@dataclass
class DetectionResult:
    features: FeatureTable
    events: list[DetectionEvent]
    states: list[StateSnapshot]

    @property
    def n_windows(self) -> int:
        return len(self.features)


def detect(
    table: FlowTable,
    baseline: Baseline,
    config: DetectorConfig | None = None,
    services: TrendService | None = None,
    use_weighted: bool = False,
    n_windows: int | None = None,
) -> DetectionResult:
    ft = score(table, baseline, n_windows)
    series = ft.weighted if use_weighted else ft.nafv
    events, states = run(series.tolist(), config, services)
    return DetectionResult(ft, events, states)


# -- artifacts -------------------------------------------------------------------


def write_features_csv(ft: FeatureTable, unit_time: float, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FEATURE_COLUMNS)
        for k, n, a, f, v, s, w in zip(
            ft.k.tolist(), ft.n.tolist(), ft.a.tolist(), ft.f.tolist(), ft.v.tolist(),
            ft.nafv.tolist(), ft.weighted.tolist(),
        ):
            writer.writerow([k, f"{k * unit_time:.6f}", repr(n), repr(a), repr(f), repr(v), repr(s), repr(w)])


def read_series_csv(path: str | os.PathLike, column: str = "nafv") -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path}: no column {column!r} (have {reader.fieldnames})")
        try:
            return np.array([float(row[column]) for row in reader])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric value in column {column!r}") from exc


def write_events(
    path: str | os.PathLike, events: Iterable[DetectionEvent], n_windows: int, config: DetectorConfig
) -> None:
    header = {
        "format": EVENT_FORMAT,
        "windows": n_windows,
        "alpha": config.alpha,
        "beta": config.beta,
        "w": config.w,
        "rho": config.rho,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for ev in events:
            fh.write(json.dumps(ev.as_dict()) + "\n")


def read_events(path: str | os.PathLike) -> tuple[dict, list[DetectionEvent]]:
    with open(path) as fh:
        lines = [line for line in fh if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty event log")
    try:
        header = json.loads(lines[0])
        if header.get("format") != EVENT_FORMAT:
            raise ValueError(f"{path}: format {header.get('format')!r}, expected {EVENT_FORMAT!r}")
        events = []
        for line in lines[1:]:
            obj = json.loads(line)
            events.append(DetectionEvent(
                k=int(obj["k"]),
                kind=EventKind(obj["kind"]),
                nafv=float(obj["nafv"]),
                y=obj.get("y"),
                w=obj.get("w"),
                forecast=tuple(obj.get("forecast", ())),
                message=obj.get("message", ""),
            ))
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise ValueError(f"{path}: malformed event log: {exc}") from exc
    return header, events
