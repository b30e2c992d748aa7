"""Seeded synthetic traffic: normal load, floods, flash crowds, one-to-one bursts.

Each window is generated independently from the scenario configuration:

* a fixed population of old users, each engaged with probability
  ``activity`` and then sending Poisson(``user_rate * unit_time``) packets
  to the victim;
* ``churn`` fresh users per window (Poisson mean) at the same per-user rate;
* background traffic the many-to-one filter should discard: one-to-one
  pairs and one-to-many scanners;
* optional segments: a flood (bots at a high per-bot rate, old users
  partly starved), a flash crowd (old users re-engaging plus a crowd of new
  users at ordinary rates) and one-to-one bulk bursts.

Windows are labelled Attack if they hold at least one bot packet, FlashCrowd
if they overlap the crowd segment, Normal otherwise.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import Any

import numpy as np

from .ingest import FlowTable, write_flow_table

LABELS = ("Normal", "Attack", "FlashCrowd")
LABELS_HEADER = "k,label"

# disjoint address blocks (base, size)
_POPULATION = (11 << 24, 1 << 24)
_CHURN = (64 << 24, 1 << 26)
_BG_SRC = (128 << 24, 1 << 24)
_BG_DST = (160 << 24, 1 << 24)
_BOTS = ((172 << 24) | (16 << 16), 1 << 20)
_CROWD = (20 << 24, 1 << 24)
_BURST_SRC = (30 << 24, 1 << 24)
_BURST_DST = (40 << 24, 1 << 24)


class ScenarioError(ValueError):
    pass


@dataclass
class AttackConfig:
    onset: float
    bots: int = 200
    rate: float = 10.0
    pool: str = "fixed-pool"
    end: float | None = None
    legit_survival: float = 0.3


@dataclass
class FlashCrowdConfig:
    onset: float
    crowd: int = 300
    rate: float | None = None
    old_activity: float = 0.95
    crowd_activity: float = 0.9
    end: float | None = None


@dataclass
class BurstConfig:
    onset: float
    end: float
    sources: int = 150
    rate: float = 30.0


@dataclass
class BackgroundConfig:
    pairs: float = 10.0
    pair_rate: float = 2.0
    scanners: int = 1
    scan_fanout: int = 20


@dataclass
class ScenarioConfig:
    duration: float = 400.0
    unit_time: float = 0.8
    population: int = 400
    user_rate: float = 2.0
    activity: float = 0.3
    churn: float = 3.0
    victim: str = "10.0.0.1"
    population_seed: int = 0
    background: BackgroundConfig = field(default_factory=BackgroundConfig)
    attack: AttackConfig | None = None
    flashcrowd: FlashCrowdConfig | None = None
    bursts: list[BurstConfig] = field(default_factory=list)

    def validate(self) -> None:
        if not self.duration > 0 or not self.unit_time > 0:
            raise ScenarioError("duration and unit_time must be positive")
        if self.population < 1:
            raise ScenarioError("population must be at least 1")
        if not self.user_rate > 0 or self.churn < 0:
            raise ScenarioError("user_rate must be positive and churn non-negative")
        if not 0 <= self.activity <= 1:
            raise ScenarioError("activity must lie in [0, 1]")
        for name, seg in (("attack", self.attack), ("flashcrowd", self.flashcrowd)):
            if seg is not None and not 0 <= seg.onset < self.duration:
                raise ScenarioError(f"{name} onset must lie in [0, duration)")
        if self.attack is not None:
            if self.attack.bots < 1 or not self.attack.rate > 0:
                raise ScenarioError("attack needs at least one bot and a positive rate")
            if self.attack.pool not in ("fixed-pool", "spoofed-random"):
                raise ScenarioError(f"unknown bot source pool {self.attack.pool!r}")
        if self.flashcrowd is not None and (self.flashcrowd.rate or self.user_rate) <= 0:
            raise ScenarioError("flash crowd rate must be positive")
        for b in self.bursts:
            if not 0 <= b.onset < b.end or not b.rate > 0:
                raise ScenarioError("burst needs 0 <= onset < end and a positive rate")

    @property
    def unit_us(self) -> int:
        return int(round(self.unit_time * 1e6))

    @property
    def n_windows(self) -> int:
        return math.ceil(round(self.duration * 1e6) / self.unit_us)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        try:
            if isinstance(data.get("background"), dict):
                data["background"] = BackgroundConfig(**data["background"])
            if isinstance(data.get("attack"), dict):
                data["attack"] = AttackConfig(**data["attack"])
            if isinstance(data.get("flashcrowd"), dict):
                data["flashcrowd"] = FlashCrowdConfig(**data["flashcrowd"])
            data["bursts"] = [b if is_dataclass(b) else BurstConfig(**b) for b in data.get("bursts", [])]
        except TypeError as exc:
            raise ScenarioError(f"bad scenario section: {exc}") from exc
        return cls(**data)


@dataclass
class Scenario:
    table: FlowTable
    labels: list[str]
    config: ScenarioConfig


@dataclass(frozen=True)
class LabeledDataset:
    flows: str
    labels: list[str]


def preset(name: str, **overrides: Any) -> ScenarioConfig:
    """Named scenarios used by the CLI and the acceptance suite.

    ``flood`` is the reference attack run: 500 windows of 0.8 s with the
    attack occupying the last 170 of them.
    """
    if name == "normal":
        cfg = ScenarioConfig(duration=240.0)
    elif name == "train":
        cfg = ScenarioConfig(duration=240.0)
    elif name == "flood":
        cfg = ScenarioConfig(duration=400.0, attack=AttackConfig(onset=264.0))
    elif name == "flashcrowd":
        cfg = ScenarioConfig(duration=240.0, flashcrowd=FlashCrowdConfig(onset=120.0))
    elif name == "mixed":
        cfg = ScenarioConfig(
            duration=480.0,
            flashcrowd=FlashCrowdConfig(onset=96.0, end=128.0),
            bursts=[BurstConfig(onset=200.0, end=216.0)],
            attack=AttackConfig(onset=336.0),
        )
    else:
        raise ScenarioError(f"unknown scenario preset {name!r}")
    for key, value in overrides.items():
        if not hasattr(cfg, key):
            raise ScenarioError(f"unknown scenario field {key!r}")
        setattr(cfg, key, value)
    return cfg


def _distinct(rng: np.random.Generator, block: tuple[int, int], size: int) -> np.ndarray:
    base, span = block
    return np.uint64(base) + rng.choice(span, size=size, replace=False).astype(np.uint64)


def _fresh(rng: np.random.Generator, block: tuple[int, int], size: int) -> np.ndarray:
    base, span = block
    return np.uint64(base) + rng.integers(0, span, size=size).astype(np.uint64)


def _overlap(lo: float, hi: float, onset: float, end: float | None) -> float:
    stop = hi if end is None else min(hi, end)
    return max(0.0, stop - max(lo, onset))


class _Collector:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.ts: list[np.ndarray] = []
        self.src: list[np.ndarray] = []
        self.dst: list[np.ndarray] = []

    def add(self, srcs: np.ndarray, counts: np.ndarray, dsts: np.ndarray | int, lo_us: int, hi_us: int) -> int:
        counts = np.asarray(counts, dtype=np.int64)
        total = int(counts.sum())
        if total == 0 or hi_us <= lo_us:
            return 0
        self.src.append(np.repeat(np.asarray(srcs, dtype=np.uint64), counts))
        if np.ndim(dsts) == 0:
            self.dst.append(np.full(total, dsts, dtype=np.uint64))
        else:
            self.dst.append(np.repeat(np.asarray(dsts, dtype=np.uint64), counts))
        self.ts.append(self.rng.integers(lo_us, hi_us, size=total))
        return total

    def table(self) -> FlowTable:
        if not self.ts:
            return FlowTable.empty()
        ts = np.concatenate(self.ts).astype(np.int64)
        src = np.concatenate(self.src)
        dst = np.concatenate(self.dst)
        order = np.argsort(ts, kind="stable")
        return FlowTable(ts[order], src[order], dst[order], np.full(ts.size, 80, dtype=np.uint16))


def gen_scenario(cfg: ScenarioConfig, seed: int = 0) -> Scenario:
    cfg.validate()
    victim = np.uint64(int.from_bytes(bytes(int(o) for o in cfg.victim.split(".")), "big"))
    pop_rng = np.random.default_rng(cfg.population_seed)
    population = _distinct(pop_rng, _POPULATION, cfg.population)
    rng = np.random.default_rng(seed)
    bots = _distinct(rng, _BOTS, cfg.attack.bots) if cfg.attack is not None else None
    crowd = _distinct(rng, _CROWD, cfg.flashcrowd.crowd) if cfg.flashcrowd is not None else None
    burst_pools = [
        (_distinct(rng, _BURST_SRC, b.sources), _distinct(rng, _BURST_DST, b.sources)) for b in cfg.bursts
    ]
    bg = cfg.background
    unit = cfg.unit_time
    unit_us = cfg.unit_us
    duration_us = int(round(cfg.duration * 1e6))
    out = _Collector(rng)
    labels = []

    for k in range(cfg.n_windows):
        lo_us, hi_us = k * unit_us, min((k + 1) * unit_us, duration_us)
        lo, hi = lo_us / 1e6, hi_us / 1e6
        label = "Normal"
        activity = cfg.activity

        fc = cfg.flashcrowd
        fc_span = _overlap(lo, hi, fc.onset, fc.end) if fc is not None else 0.0
        atk = cfg.attack
        atk_span = _overlap(lo, hi, atk.onset, atk.end) if atk is not None else 0.0
        if fc_span > 0:
            activity = max(activity, fc.old_activity)
            label = "FlashCrowd"
        if atk_span > 0:
            activity *= atk.legit_survival

        engaged = population[rng.random(population.size) < activity]
        out.add(engaged, rng.poisson(cfg.user_rate * unit, engaged.size), victim, lo_us, hi_us)

        m = int(rng.poisson(cfg.churn))
        out.add(_fresh(rng, _CHURN, m), np.maximum(1, rng.poisson(cfg.user_rate * unit, m)), victim, lo_us, hi_us)

        m = int(rng.poisson(bg.pairs))
        out.add(_fresh(rng, _BG_SRC, m), np.maximum(1, rng.poisson(bg.pair_rate * unit, m)),
                _fresh(rng, _BG_DST, m), lo_us, hi_us)
        for _ in range(bg.scanners):
            scanner = _fresh(rng, _BG_SRC, 1)
            targets = _fresh(rng, _BG_DST, bg.scan_fanout)
            out.add(np.repeat(scanner, bg.scan_fanout), np.ones(bg.scan_fanout, np.int64), targets, lo_us, hi_us)

        if fc_span > 0:
            rate = fc.rate or cfg.user_rate
            active = crowd[rng.random(crowd.size) < fc.crowd_activity]
            span_lo = int(max(lo, fc.onset) * 1e6)
            span_hi = int(min(hi, fc.end) * 1e6) if fc.end is not None else hi_us
            out.add(active, rng.poisson(rate * fc_span, active.size), victim, span_lo, span_hi)

        for b, (srcs, dsts) in zip(cfg.bursts, burst_pools):
            span = _overlap(lo, hi, b.onset, b.end)
            if span > 0:
                span_lo, span_hi = int(max(lo, b.onset) * 1e6), int(min(hi, b.end) * 1e6)
                out.add(srcs, rng.poisson(b.rate * span, srcs.size), dsts, span_lo, span_hi)

        if atk_span > 0:
            span_lo = int(max(lo, atk.onset) * 1e6)
            span_hi = int(min(hi, atk.end) * 1e6) if atk.end is not None else hi_us
            if atk.pool == "fixed-pool":
                counts = rng.poisson(atk.rate * atk_span, bots.size)
                sent = out.add(bots, counts, victim, span_lo, span_hi)
            else:
                total = int(rng.poisson(atk.bots * atk.rate * atk_span))
                sent = out.add(_fresh(rng, (0, 1 << 32), total), np.ones(total, np.int64), victim, span_lo, span_hi)
            if sent == 0:
                out.add(bots[:1] if bots is not None else _fresh(rng, (0, 1 << 32), 1), np.ones(1, np.int64),
                        victim, span_lo, span_hi)
            label = "Attack"
        labels.append(label)

    return Scenario(out.table(), labels, cfg)


def write_labels(labels: list[str], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(LABELS_HEADER + "\n")
        for k, label in enumerate(labels):
            fh.write(f"{k},{label}\n")


def read_labels(path: str | os.PathLike) -> list[str]:
    labels: list[str] = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or (lineno == 1 and line.startswith("k,")):
                continue
            k_text, _, label = line.partition(",")
            if not k_text.isdigit() or label not in LABELS:
                raise ValueError(f"{path}: line {lineno}: expected 'k,label' with label in {LABELS}")
            if int(k_text) != len(labels):
                raise ValueError(f"{path}: line {lineno}: window index {k_text} out of sequence")
            labels.append(label)
    return labels


def save_dataset(scenario: Scenario, flows_path: str | os.PathLike, labels_path: str | os.PathLike) -> LabeledDataset:
    write_flow_table(scenario.table, flows_path)
    write_labels(scenario.labels, labels_path)
    return LabeledDataset(os.fspath(flows_path), list(scenario.labels))
