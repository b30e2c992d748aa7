"""Window-level detection metrics with attack windows as the positive class.

    dr = tp / (tp + fn)     share of attack windows caught
    mr = fn / (tp + fn)     share of attack windows missed
    fr = fp / (fp + tn)     share of non-attack windows flagged

A window is flagged while the detector is in its alarmed state. Rates whose
denominator is zero are reported as ``None``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .detector import DetectionEvent, EventKind

METRICS_FORMAT = "nafv-metrics/1"


class LabelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Metrics:
    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def windows(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def dr(self) -> float | None:
        pos = self.tp + self.fn
        return self.tp / pos if pos else None

    @property
    def mr(self) -> float | None:
        pos = self.tp + self.fn
        return self.fn / pos if pos else None

    @property
    def fr(self) -> float | None:
        neg = self.fp + self.tn
        return self.fp / neg if neg else None

    def as_dict(self) -> dict:
        return {
            "format": METRICS_FORMAT,
            "dr": self.dr,
            "mr": self.mr,
            "fr": self.fr,
            "tp": self.tp,
            "fn": self.fn,
            "fp": self.fp,
            "tn": self.tn,
            "windows": self.windows,
        }


def flagged_windows(events: Iterable[DetectionEvent], n_windows: int) -> list[bool]:
    """Alarm state per window, rebuilt from alarm onset / clear events."""
    marks: dict[int, list[EventKind]] = {}
    for ev in events:
        if not 0 <= ev.k < n_windows:
            raise LabelMismatchError(f"event at window {ev.k} outside the {n_windows} labelled windows")
        if ev.kind in (EventKind.DDOS_ALARM, EventKind.ALARM_CLEARED):
            marks.setdefault(ev.k, []).append(ev.kind)
    flags = []
    alarmed = False
    for k in range(n_windows):
        for kind in marks.get(k, ()):
            alarmed = kind == EventKind.DDOS_ALARM
        flags.append(alarmed)
    return flags


def confusion(flags: Sequence[bool], labels: Sequence[str]) -> Metrics:
    if len(flags) != len(labels):
        raise LabelMismatchError(f"{len(flags)} windows scored but {len(labels)} labels given")
    tp = fn = fp = tn = 0
    for flagged, label in zip(flags, labels):
        attack = label == "Attack"
        if attack and flagged:
            tp += 1
        elif attack:
            fn += 1
        elif flagged:
            fp += 1
        else:
            tn += 1
    return Metrics(tp, fn, fp, tn)


def evaluate(events: Iterable[DetectionEvent], labels: Sequence[str], n_windows: int | None = None) -> Metrics:
    if n_windows is not None and n_windows != len(labels):
        raise LabelMismatchError(f"event log covers {n_windows} windows but {len(labels)} labels given")
    return confusion(flagged_windows(events, len(labels)), labels)
