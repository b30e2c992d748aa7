"""Threshold-activated detection state machine.

Idle: each score is compared with ``alpha``. ``beta`` consecutive scores above
it start the ARIMA trend predictor; nothing is fitted before that, so a quiet
stream never pays for the model.

While predicting, the detector looks at a window of ``w`` points: the points
observed since the outlier run began (each abnormal when
``max(observed, one-step forecast) > alpha``) followed by model forecasts for
the remaining slots. ``y`` counts abnormal points in that window. The alarm
fires once when ``y / w >= rho`` and clears when the ratio drops below it;
the predictor is switched off again when ``y`` reaches 0.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Protocol, Sequence

import numpy as np

from .features import NafvPoint
from .timeseries import ArimaFitError, ArimaModel, ArimaSpec, DegenerateSeriesError, SeriesTooShortError, fit_arima

log = logging.getLogger(__name__)

EVENT_FORMAT = "nafv-events/1"


class Mode(str, Enum):
    IDLE = "Idle"
    ARMED = "Armed"
    PREDICTING = "Predicting"
    ALARMED = "Alarmed"


class EventKind(str, Enum):
    OUTLIER_MARKED = "OutlierMarked"
    PREDICTOR_ACTIVATED = "PredictorActivated"
    DDOS_ALARM = "DdosAlarm"
    PREDICTOR_DEACTIVATED = "PredictorDeactivated"
    ALARM_CLEARED = "AlarmCleared"
    PREDICTOR_FIT_FAILED = "PredictorFitFailed"


@dataclass
class DetectorConfig:
    alpha: float = 25.0
    beta: int = 2
    w: int = 10
    rho: float = 0.5
    refit_interval: float = 16
    min_history: int | None = None
    order: ArimaSpec = field(default_factory=ArimaSpec)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.beta < 1:
            raise ValueError("beta must be at least 1")
        if self.w < 1:
            raise ValueError("w must be at least 1")
        if not 0 < self.rho <= 1:
            raise ValueError("rho must lie in (0, 1]")
        if not self.refit_interval >= 1:
            raise ValueError("refit_interval must be at least 1 (inf disables refits)")
        if self.min_history is None:
            self.min_history = self.order.min_length


@dataclass(frozen=True)
class DetectionEvent:
    k: int
    kind: EventKind
    nafv: float
    y: int | None = None
    w: int | None = None
    forecast: tuple[float, ...] = ()
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "kind": self.kind.value,
            "nafv": self.nafv,
            "y": self.y,
            "w": self.w,
            "forecast": list(self.forecast),
            "message": self.message,
        }


@dataclass(frozen=True)
class StateSnapshot:
    k: int
    mode: Mode
    armed: int
    y: int | None


class TrendService(Protocol):
    def fit(self, history: Sequence[float]) -> ArimaModel: ...
    def forecast(self, model: ArimaModel, h: int) -> np.ndarray: ...
    def update(self, model: ArimaModel, observations: Sequence[float]) -> ArimaModel: ...


class ArimaService:
    """ARIMA fit/forecast calls with invocation counters."""

    def __init__(self, spec: ArimaSpec = ArimaSpec()):
        self.spec = spec
        self.fits = 0
        self.forecasts = 0
        self.updates = 0

    @property
    def calls(self) -> int:
        return self.fits + self.forecasts + self.updates

    def fit(self, history: Sequence[float]) -> ArimaModel:
        self.fits += 1
        return fit_arima(history, self.spec)

    def forecast(self, model: ArimaModel, h: int) -> np.ndarray:
        self.forecasts += 1
        return model.forecast(h)

    def update(self, model: ArimaModel, observations: Sequence[float]) -> ArimaModel:
        self.updates += 1
        return model.extend(observations)


@dataclass
class DetectorState:
    mode: Mode = Mode.IDLE
    armed: int = 0
    run: list[float] = field(default_factory=list)
    model: ArimaModel | None = None
    observed: deque = field(default_factory=deque)
    forecast: tuple[float, ...] = ()
    y: int = 0
    since_fit: int = 0
    history: list[float] = field(default_factory=list)

    def snapshot(self, k: int) -> StateSnapshot:
        active = self.mode in (Mode.PREDICTING, Mode.ALARMED)
        return StateSnapshot(k, self.mode, self.armed, self.y if active else None)


class Detector:
    def __init__(self, config: DetectorConfig | None = None, services: TrendService | None = None):
        self.config = config or DetectorConfig()
        self.services = services if services is not None else ArimaService(self.config.order)
        self.state = DetectorState()

    def reset(self) -> None:
        self.state = DetectorState()

    # -- helpers ----------------------------------------------------------------

    def _evaluate(self) -> None:
        """Recompute the forecast tail of the window and y."""
        st, cfg = self.state, self.config
        remaining = cfg.w - len(st.observed)
        if remaining > 0:
            st.forecast = tuple(float(v) for v in self.services.forecast(st.model, remaining))
        else:
            st.forecast = ()
        st.y = sum(st.observed) + sum(1 for v in st.forecast if v > cfg.alpha)

    def _event(self, k: int, kind: EventKind, value: float, message: str = "") -> DetectionEvent:
        st = self.state
        active = kind in (EventKind.PREDICTOR_ACTIVATED, EventKind.DDOS_ALARM, EventKind.ALARM_CLEARED,
                          EventKind.PREDICTOR_DEACTIVATED)
        return DetectionEvent(
            k, kind, value,
            y=st.y if active else None,
            w=self.config.w if active else None,
            forecast=st.forecast if active else (),
            message=message,
        )

    def _try_activate(self, k: int, value: float) -> list[DetectionEvent]:
        st, cfg = self.state, self.config
        try:
            model = self.services.fit(st.history)
        except (ArimaFitError, DegenerateSeriesError, SeriesTooShortError) as exc:
            log.warning("window %d: predictor fit failed: %s", k, exc)
            st.mode, st.armed = Mode.ARMED, max(1, min(st.armed, cfg.beta - 1))
            return [self._event(k, EventKind.PREDICTOR_FIT_FAILED, value, str(exc))]
        st.mode, st.armed, st.model, st.since_fit = Mode.PREDICTING, 0, model, 0
        st.observed = deque((v > cfg.alpha for v in st.run[-cfg.w:]), maxlen=cfg.w)
        self._evaluate()
        events = [self._event(k, EventKind.PREDICTOR_ACTIVATED, value)]
        if st.y >= cfg.rho * cfg.w:
            st.mode = Mode.ALARMED
            events.append(self._event(k, EventKind.DDOS_ALARM, value))
        return events

    def _deactivate(self) -> None:
        st = self.state
        st.mode, st.model, st.forecast, st.y, st.run = Mode.IDLE, None, (), 0, []
        st.observed = deque()

    # -- transition ----------------------------------------------------------------

    def step(self, point: NafvPoint | float, k: int | None = None) -> list[DetectionEvent]:
        if isinstance(point, NafvPoint):
            value, k = point.value, point.k if k is None else k
        else:
            value = float(point)
            k = len(self.state.history) if k is None else k
        st, cfg = self.state, self.config
        st.history.append(value)
        outlier = value > cfg.alpha

        if st.mode in (Mode.IDLE, Mode.ARMED):
            if not outlier:
                st.mode, st.armed, st.run = Mode.IDLE, 0, []
                return []
            st.run.append(value)
            count = st.armed + 1
            if count < cfg.beta:
                st.mode, st.armed = Mode.ARMED, count
                return [self._event(k, EventKind.OUTLIER_MARKED, value)]
            if len(st.history) < cfg.min_history:
                # cold start: keep reporting outliers until a model can be fitted
                st.mode, st.armed = Mode.ARMED, max(1, cfg.beta - 1)
                return [self._event(k, EventKind.OUTLIER_MARKED, value, "insufficient history for predictor")]
            st.armed = count
            return self._try_activate(k, value)

        # Predicting or Alarmed
        predicted = float(self.services.forecast(st.model, 1)[0])
        st.observed.append(max(value, predicted) > cfg.alpha)
        st.model = self.services.update(st.model, [value])
        st.since_fit += 1
        if st.since_fit >= cfg.refit_interval:
            try:
                st.model = self.services.fit(st.history)
            except (ArimaFitError, DegenerateSeriesError, SeriesTooShortError) as exc:
                log.warning("window %d: refit failed, keeping previous model: %s", k, exc)
            st.since_fit = 0
        self._evaluate()

        events: list[DetectionEvent] = []
        ratio = st.y / cfg.w
        if st.mode == Mode.ALARMED:
            if ratio < cfg.rho:
                st.mode = Mode.PREDICTING
                events.append(self._event(k, EventKind.ALARM_CLEARED, value))
        elif ratio >= cfg.rho:
            st.mode = Mode.ALARMED
            events.append(self._event(k, EventKind.DDOS_ALARM, value))
        if st.mode == Mode.PREDICTING and st.y == 0:
            events.append(self._event(k, EventKind.PREDICTOR_DEACTIVATED, value))
            self._deactivate()
        return events


def run(
    points: Iterable[NafvPoint | float],
    config: DetectorConfig | None = None,
    services: TrendService | None = None,
) -> tuple[list[DetectionEvent], list[StateSnapshot]]:
    detector = Detector(config, services)
    events: list[DetectionEvent] = []
    states: list[StateSnapshot] = []
    for i, point in enumerate(points):
        k = point.k if isinstance(point, NafvPoint) else i
        events.extend(detector.step(point, k))
        states.append(detector.state.snapshot(k))
    return events, states
