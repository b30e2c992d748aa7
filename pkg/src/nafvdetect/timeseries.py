"""ARIMA(p, d, q) modelling of the score series.

Conventions: after ``d`` rounds of differencing the series ``z`` follows

    z_t - mu = sum_i ar[i] (z_{t-i} - mu) + e_t + sum_j ma[j] e_{t-j}

Estimation minimises the conditional sum of squares (CSS): the first ``p``
differenced values are conditioned on and pre-sample innovations are zero.
Starting values come from a Hannan-Rissanen two-stage regression. The
optimiser works on unconstrained parameters mapped through partial
autocorrelations in (-1, 1), so every returned model is stationary and
invertible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import lfilter
from scipy.special import gammaincc

MAX_NFEV = 2000
_PACF_LIMIT = 1.0 - 1e-5
_ROOT_MARGIN = 1.0 + 1e-6


class SeriesTooShortError(ValueError):
    pass


class DegenerateSeriesError(ValueError):
    pass


class ArimaFitError(RuntimeError):
    def __init__(self, message: str, best: "ArimaModel | None" = None, diagnostics: dict | None = None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ArimaSpec:
    p: int = 2
    d: int = 2
    q: int = 1
    intercept: bool = False

    def __post_init__(self):
        if min(self.p, self.d, self.q) < 0:
            raise ValueError(f"orders must be non-negative: {self}")
        if self.p + self.q < 1:
            raise ValueError("need at least one AR or MA term")

    @property
    def min_length(self) -> int:
        return 10 * (self.p + self.q + 1) + self.d


# -- differencing ---------------------------------------------------------------


def difference(series: Sequence[float], d: int = 1) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if d < 0:
        raise ValueError("d must be non-negative")
    if x.size <= d:
        raise SeriesTooShortError(f"series of length {x.size} cannot be differenced {d} times")
    for _ in range(d):
        x = np.diff(x)
    return x


def integrate(diffed: Sequence[float], initial: Sequence[float], d: int | None = None) -> np.ndarray:
    """Invert ``d``-fold differencing given the first ``d`` original values.

    Returns the full reconstructed series, anchors included, so
    ``integrate(difference(x, d), x[:d])`` equals ``x``. ``d`` defaults to
    the number of anchors; passing it makes a wrong anchor count an error.
    """
    z = np.asarray(diffed, dtype=float)
    anchors = np.asarray(initial, dtype=float).reshape(-1)
    if d is not None and anchors.size != d:
        raise ValueError(f"integrating {d} times needs {d} anchor values, got {anchors.size}")
    d = anchors.size
    # first element of each intermediate differencing level
    firsts = []
    level = anchors
    for _ in range(d):
        firsts.append(level[0])
        level = np.diff(level)
    for first in reversed(firsts):
        z = np.concatenate(([first], first + np.cumsum(z)))
    return z


# -- correlation diagnostics ----------------------------------------------------


def acf(series: Sequence[float], max_lag: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise SeriesTooShortError(f"need more than {max_lag} observations, got {n}")
    xc = x - x.mean()
    gamma0 = float(xc @ xc) / n
    if gamma0 <= 1e-300 or not np.isfinite(gamma0):
        raise DegenerateSeriesError("autocorrelation is undefined for a constant series")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for h in range(1, max_lag + 1):
        out[h] = float(xc[:-h] @ xc[h:]) / n / gamma0
    return out


def _durbin_levinson(rho: np.ndarray) -> np.ndarray:
    """Partial autocorrelations from autocorrelations rho[0..m]."""
    m = rho.size - 1
    pac = np.empty(m + 1)
    pac[0] = 1.0
    if m == 0:
        return pac
    phi = np.zeros(m + 1)
    phi[1] = pac[1] = rho[1]
    v = 1.0 - rho[1] ** 2
    for k in range(2, m + 1):
        if v <= 0:
            pac[k:] = 0.0
            break
        num = rho[k] - phi[1:k] @ rho[k - 1:0:-1]
        a = num / v
        prev = phi[1:k].copy()
        phi[1:k] = prev - a * prev[::-1]
        phi[k] = pac[k] = a
        v *= 1.0 - a * a
    return pac


def pacf(series: Sequence[float], max_lag: int) -> np.ndarray:
    return _durbin_levinson(acf(series, max_lag))


def confidence_band(n: int) -> float:
    return 1.96 / math.sqrt(n)


@dataclass(frozen=True)
class LjungBoxResult:
    statistic: float
    df: int
    p_value: float
    lags: int


def ljung_box(residuals: Sequence[float], lags: int | None = None, fitted_params: int = 0) -> LjungBoxResult:
    """Portmanteau whiteness test; df = lags - fitted_params, floored at 1."""
    r = np.asarray(residuals, dtype=float)
    n = r.size
    if lags is None:
        lags = max(1, min(20, n // 5))
    if n <= lags:
        raise SeriesTooShortError(f"Ljung-Box with {lags} lags needs more than {lags} residuals")
    rho = acf(r, lags)[1:]
    h = np.arange(1, lags + 1)
    q = float(n * (n + 2) * np.sum(rho ** 2 / (n - h)))
    df = max(lags - fitted_params, 1)
    return LjungBoxResult(q, df, float(gammaincc(df / 2.0, q / 2.0)), lags)


# -- parameter transforms -------------------------------------------------------


def _pacf_to_poly(r: np.ndarray) -> np.ndarray:
    """AR coefficients (1 - sum c_i B^i) whose partial autocorrelations are r."""
    c = np.zeros(0)
    for k, rk in enumerate(r, start=1):
        c = np.append(c - rk * c[::-1], rk) if k > 1 else np.array([rk])
    return c


def _poly_to_pacf(c: np.ndarray) -> np.ndarray | None:
    """Inverse of :func:`_pacf_to_poly`; None if the polynomial is not stable."""
    c = np.asarray(c, dtype=float).copy()
    r = np.zeros(c.size)
    for k in range(c.size, 0, -1):
        rk = c[k - 1]
        if abs(rk) >= 1:
            return None
        r[k - 1] = rk
        if k > 1:
            prev = c[: k - 1]
            c = (prev + rk * prev[::-1]) / (1 - rk * rk)
    return r


def _min_root_modulus(coefs: Sequence[float], sign: float) -> float:
    """Smallest root modulus of 1 + sign * sum(coefs_i z^i)."""
    coefs = np.asarray(coefs, dtype=float)
    if coefs.size == 0 or not np.any(coefs):
        return math.inf
    poly = np.concatenate(([1.0], sign * coefs))
    roots = np.roots(poly[::-1])
    return float(np.min(np.abs(roots))) if roots.size else math.inf


def is_stationary(ar: Sequence[float]) -> bool:
    return _min_root_modulus(ar, -1.0) > _ROOT_MARGIN


def is_invertible(ma: Sequence[float]) -> bool:
    return _min_root_modulus(ma, 1.0) > _ROOT_MARGIN


# -- CSS machinery --------------------------------------------------------------


def css_residuals(z: np.ndarray, ar: np.ndarray, ma: np.ndarray, mu: float = 0.0) -> np.ndarray:
    """Innovations e_p..e_{n-1}, conditioning on the first p values."""
    p = ar.size
    w = z - mu
    y = w[p:].copy()
    for i in range(1, p + 1):
        y -= ar[i - 1] * w[p - i: w.size - i]
    if ma.size:
        y = lfilter([1.0], np.concatenate(([1.0], ma)), y)
    return y


def _hannan_rissanen(w: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    n = w.size
    if q == 0:
        if p == 0:
            return np.zeros(0), np.zeros(0)
        X = np.column_stack([w[p - i: n - i] for i in range(1, p + 1)])
        coef, *_ = np.linalg.lstsq(X, w[p:], rcond=None)
        return coef, np.zeros(0)
    m = min(max(p + q + 2, int(10 * math.log10(n))), n // 4)
    X = np.column_stack([w[m - i: n - i] for i in range(1, m + 1)])
    long_ar, *_ = np.linalg.lstsq(X, w[m:], rcond=None)
    ehat = np.zeros(n)
    ehat[m:] = w[m:] - X @ long_ar
    start = m + max(p, q)
    cols = [w[start - i: n - i] for i in range(1, p + 1)]
    cols += [ehat[start - j: n - j] for j in range(1, q + 1)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), w[start:], rcond=None)
    return coef[:p], coef[p:]


def _to_unconstrained(coefs: np.ndarray, sign: float) -> np.ndarray:
    r = _poly_to_pacf(sign * coefs) if coefs.size else np.zeros(0)
    if r is None or np.any(np.abs(r) >= _PACF_LIMIT):
        return np.zeros(coefs.size)
    return np.arctanh(r / _PACF_LIMIT)


def _from_unconstrained(u: np.ndarray, sign: float) -> np.ndarray:
    if u.size == 0:
        return np.zeros(0)
    return sign * _pacf_to_poly(_PACF_LIMIT * np.tanh(u))


@dataclass(frozen=True)
class ArimaModel:
    spec: ArimaSpec
    ar: tuple[float, ...]
    ma: tuple[float, ...]
    intercept: float
    sigma2: float
    tail: tuple[float, ...]
    resid_tail: tuple[float, ...]
    css: float = 0.0
    nobs: int = 0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False, compare=False)
    converged: bool = True

    @property
    def aic(self) -> float:
        n = max(self.residuals.size, 1)
        k = self.spec.p + self.spec.q + int(self.spec.intercept) + 1
        return n * math.log(max(self.css, 1e-300) / n) + 2 * k

    @classmethod
    def from_coefficients(
        cls,
        series: Sequence[float],
        spec: ArimaSpec,
        ar: Sequence[float],
        ma: Sequence[float],
        intercept: float = 0.0,
    ) -> "ArimaModel":
        """Condition a model with given coefficients on ``series``."""
        x = np.asarray(series, dtype=float)
        ar_arr = np.asarray(ar, dtype=float).reshape(spec.p)
        ma_arr = np.asarray(ma, dtype=float).reshape(spec.q)
        z = difference(x, spec.d)
        if z.size <= spec.p:
            raise SeriesTooShortError("series too short for the AR order")
        e = css_residuals(z, ar_arr, ma_arr, intercept)
        css = float(e @ e)
        return cls._build(x, spec, ar_arr, ma_arr, intercept, e, css, True)

    @classmethod
    def _build(cls, x, spec, ar, ma, mu, e, css, converged) -> "ArimaModel":
        keep = max(spec.p, spec.q) + spec.d
        return cls(
            spec=spec,
            ar=tuple(float(v) for v in ar),
            ma=tuple(float(v) for v in ma),
            intercept=float(mu),
            sigma2=css / max(e.size, 1),
            tail=tuple(float(v) for v in x[x.size - keep:]) if keep else (),
            resid_tail=tuple(float(v) for v in e[e.size - spec.q:]) if spec.q else (),
            css=css,
            nobs=int(x.size),
            residuals=e,
            converged=converged,
        )

    def _z_tail(self) -> np.ndarray:
        if self.spec.d == 0:
            return np.asarray(self.tail, dtype=float)
        return difference(self.tail, self.spec.d)

    def forecast(self, h: int) -> np.ndarray:
        return forecast(self, h)

    def extend(self, observations: Sequence[float]) -> "ArimaModel":
        """Condition on further observations with the coefficients held fixed."""
        p, d, q = self.spec.p, self.spec.d, self.spec.q
        ar, ma, mu = np.array(self.ar), np.array(self.ma), self.intercept
        tail = list(self.tail)
        z_hist = list(self._z_tail())
        e_hist = list(self.resid_tail)
        keep = max(p, q) + d
        for value in observations:
            tail.append(float(value))
            z_new = float(difference(tail[-(d + 1):], d)[-1]) if d else float(value)
            pred = mu
            for i in range(1, p + 1):
                pred += ar[i - 1] * (z_hist[-i] - mu)
            for j in range(1, q + 1):
                pred += ma[j - 1] * e_hist[-j]
            z_hist.append(z_new)
            e_hist.append(z_new - pred)
            tail = tail[-keep:] if keep else []
        return replace(
            self,
            tail=tuple(tail),
            resid_tail=tuple(e_hist[len(e_hist) - q:]) if q else (),
            nobs=self.nobs + len(observations),
        )


def fit_arima(series: Sequence[float], spec: ArimaSpec = ArimaSpec(), max_nfev: int = MAX_NFEV) -> ArimaModel:
    x = np.asarray(series, dtype=float)
    if not np.isfinite(x).all():
        raise DegenerateSeriesError("series contains non-finite values")
    if x.size < spec.min_length:
        raise SeriesTooShortError(f"ARIMA{(spec.p, spec.d, spec.q)} needs at least {spec.min_length} points, got {x.size}")
    z = difference(x, spec.d)
    scale = float(np.std(z))
    if not scale > 1e-12 * max(1.0, float(np.abs(z).max())):
        raise DegenerateSeriesError("differenced series has zero variance")
    p, q = spec.p, spec.q
    # work on a unit-variance copy; coefficients are scale free
    zs = z / scale
    mu0 = float(zs.mean()) if spec.intercept else 0.0
    ar0, ma0 = _hannan_rissanen(zs - mu0, p, q)
    u0 = np.concatenate([_to_unconstrained(ar0, 1.0), _to_unconstrained(ma0, -1.0)])
    if spec.intercept:
        u0 = np.append(u0, mu0)

    def unpack(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        ar = _from_unconstrained(u[:p], 1.0)
        ma = _from_unconstrained(u[p:p + q], -1.0)
        mu = float(u[p + q]) if spec.intercept else 0.0
        return ar, ma, mu

    def resid(u: np.ndarray) -> np.ndarray:
        ar, ma, mu = unpack(u)
        return css_residuals(zs, ar, ma, mu)

    result = least_squares(resid, u0, method="trf", max_nfev=max_nfev, x_scale="jac")
    ar, ma, mu = unpack(result.x)
    # pull estimates strictly inside the admissible region if rounding put them on its edge
    shrink = 1.0
    while not (is_stationary(ar) and is_invertible(ma)) and shrink > 0.9:
        shrink *= 0.9999
        ar = _from_unconstrained(np.arctanh(np.clip(_poly_to_pacf(ar) * shrink, -_PACF_LIMIT, _PACF_LIMIT)), 1.0) \
            if ar.size else ar
        ma = _from_unconstrained(np.arctanh(np.clip(_poly_to_pacf(-ma) * shrink, -_PACF_LIMIT, _PACF_LIMIT)), -1.0) \
            if ma.size else ma
    mu *= scale
    e = css_residuals(z, ar, ma, mu)
    css = float(e @ e)
    model = ArimaModel._build(x, spec, ar, ma, mu, e, css, result.status > 0)
    if result.status <= 0 or not np.isfinite(css):
        raise ArimaFitError(
            f"CSS optimisation did not converge after {result.nfev} evaluations ({result.message})",
            best=model,
            diagnostics={"nfev": result.nfev, "status": result.status, "css": css},
        )
    return model


def forecast(model: ArimaModel, h: int) -> np.ndarray:
    """h-step forecasts on the original (undifferenced) scale."""
    if h < 1:
        raise ValueError("forecast horizon must be at least 1")
    p, d, q = model.spec.p, model.spec.d, model.spec.q
    ar, ma, mu = model.ar, model.ma, model.intercept
    z_hist = list(model._z_tail())
    e_hist = list(model.resid_tail)
    out = []
    for step in range(h):
        pred = mu
        for i in range(1, p + 1):
            pred += ar[i - 1] * (z_hist[-i] - mu)
        for j in range(1, q + 1):
            # future innovations are zero
            if j > step:
                pred += ma[j - 1] * e_hist[-j]
        z_hist.append(pred)
        e_hist.append(0.0)
        out.append(pred)
    zf = np.asarray(out)
    if d == 0:
        return zf
    return integrate(zf, model.tail[-d:])[d:]


def select_order(series: Sequence[float], d: int = 2, max_p: int = 3, max_q: int = 3) -> ArimaModel:
    """Smallest-AIC model over p <= max_p, q <= max_q at fixed d."""
    best: ArimaModel | None = None
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            if p + q == 0:
                continue
            try:
                model = fit_arima(series, ArimaSpec(p, d, q))
            except (ArimaFitError, SeriesTooShortError):
                continue
            if best is None or model.aic < best.aic:
                best = model
    if best is None:
        raise ArimaFitError("no candidate order could be fitted")
    return best


@dataclass(frozen=True)
class DiagnosticsReport:
    acf: np.ndarray
    pacf: np.ndarray
    band: float
    resid_acf: np.ndarray
    ljung_box: LjungBoxResult
    model: ArimaModel

    def as_dict(self) -> dict:
        m = self.model
        return {
            "acf": self.acf.tolist(),
            "pacf": self.pacf.tolist(),
            "band": self.band,
            "resid_acf": self.resid_acf.tolist(),
            "ljung_box": {
                "statistic": self.ljung_box.statistic,
                "df": self.ljung_box.df,
                "p_value": self.ljung_box.p_value,
                "lags": self.ljung_box.lags,
            },
            "model": {
                "order": [m.spec.p, m.spec.d, m.spec.q],
                "ar": list(m.ar),
                "ma": list(m.ma),
                "intercept": m.intercept,
                "sigma2": m.sigma2,
                "aic": m.aic,
            },
        }


def diagnose(series: Sequence[float], spec: ArimaSpec = ArimaSpec(), max_lag: int = 20) -> DiagnosticsReport:
    x = np.asarray(series, dtype=float)
    max_lag = min(max_lag, x.size - 1)
    model = fit_arima(x, spec)
    std_resid = model.residuals / math.sqrt(model.sigma2) if model.sigma2 > 0 else model.residuals
    resid_lags = min(max_lag, std_resid.size - 1)
    return DiagnosticsReport(
        acf=acf(x, max_lag),
        pacf=pacf(x, max_lag),
        band=confidence_band(x.size),
        resid_acf=acf(std_resid, resid_lags),
        ljung_box=ljung_box(std_resid, fitted_params=spec.p + spec.q),
        model=model,
    )
