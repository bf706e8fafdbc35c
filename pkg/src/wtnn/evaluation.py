"""Survival metrics: Kaplan-Meier, IPCW, C-index, Brier/IBS, td-AUC, xi calibration, MC dropout."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from . import weibull
from .network import ArchSpec, forward_batch, sample_dropout_masks, with_dropout

log = logging.getLogger(__name__)

W_MAX = 100.0


class UndefinedMetricError(ValueError):
    """The metric has no comparable pairs / cases / controls for the given data."""


@dataclass
class KMEstimate:
    event_times: np.ndarray
    survival_values: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __call__(self, t):
        """Right-continuous step function S(t)."""
        idx = np.searchsorted(self.event_times, t, side="right") - 1
        vals = np.concatenate([[1.0], self.survival_values])
        return vals[np.asarray(idx) + 1]

    def left(self, t):
        """S(t-), the value just before t."""
        idx = np.searchsorted(self.event_times, t, side="left") - 1
        vals = np.concatenate([[1.0], self.survival_values])
        return vals[np.asarray(idx) + 1]


def kaplan_meier(times, event_flags) -> KMEstimate:
    """Product-limit estimator over the distinct observed times.

    Pass ``1 - delta`` as the flags to estimate the censoring distribution.
    """
    times = np.asarray(times, dtype=float)
    flags = np.asarray(event_flags, dtype=float)
    if times.size == 0:
        raise ValueError("Kaplan-Meier needs at least one observation")
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    uniq, inverse = np.unique(times, return_inverse=True)
    events = np.bincount(inverse, weights=flags, minlength=uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    at_risk = times.size - np.concatenate([[0], np.cumsum(counts)[:-1]])
    surv = np.cumprod(1.0 - events / at_risk)
    return KMEstimate(uniq, surv, at_risk.astype(float), events)


def _censoring_survival_left(times, delta, at):
    km = kaplan_meier(times, 1.0 - np.asarray(delta, dtype=float))
    return km.left(at)


def _inverse(g, w_max):
    g = np.asarray(g, dtype=float)
    with np.errstate(divide="ignore"):
        inv = np.where(g > 0, 1.0 / np.where(g > 0, g, 1.0), np.inf)
    capped = inv > w_max
    if np.any(capped):
        log.info("capped %d IPCW weights at %g", int(capped.sum()), w_max)
    return np.minimum(inv, w_max)


def ipcw_weights(times, event_flags, w_max: float = W_MAX, normalize: bool = False,
                 form: str = "inverse_censoring") -> np.ndarray:
    """Inverse-probability-of-censoring weights.

    ``form="inverse_censoring"`` gives delta / G(Z-), with G the KM estimate
    of the censoring distribution.  ``form="km_jump"`` gives the jump of
    the event-time KM estimator at each event, scaled by n, divided evenly
    among tied events.  ``normalize`` rescales to mean 1 over events.
    """
    times = np.asarray(times, dtype=float)
    delta = np.asarray(event_flags, dtype=float)
    if form == "inverse_censoring":
        w = delta * _inverse(_censoring_survival_left(times, delta, times), w_max)
    elif form == "km_jump":
        km = kaplan_meier(times, delta)
        prev = np.concatenate([[1.0], km.survival_values[:-1]])
        jump = prev - km.survival_values
        idx = np.searchsorted(km.event_times, times)
        per_event = np.divide(jump, km.events, out=np.zeros_like(jump), where=km.events > 0)
        w = delta * per_event[idx] * times.size
    else:
        raise ValueError(f"unknown IPCW form {form!r}")
    if normalize and delta.sum() > 0:
        w = w / w[delta > 0].mean()
    return w


def c_index(scores, times, event_flags) -> float:
    """Harrell's concordance: pairs with z_i < z_k and delta_i = 1, score ties count 1/2."""
    s = np.asarray(scores, dtype=float)
    z = np.asarray(times, dtype=float)
    d = np.asarray(event_flags, dtype=float)
    comparable = (z[:, None] < z[None, :]) & (d[:, None] == 1)
    n_pairs = comparable.sum()
    if n_pairs == 0:
        raise UndefinedMetricError("no comparable pairs")
    diff = s[:, None] - s[None, :]
    concordant = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float((concordant * comparable).sum() / n_pairs)


def brier(t: float, predicted_survival, times, event_flags, w_max: float = W_MAX) -> float:
    """IPCW Brier score at time t with the two-branch (Graf) weights."""
    pred = np.asarray(predicted_survival, dtype=float)
    z = np.asarray(times, dtype=float)
    d = np.asarray(event_flags, dtype=float)
    if np.any(pred < 0) or np.any(pred > 1):
        raise ValueError("predicted survival must lie in [0, 1]")
    died = (z <= t) & (d == 1)
    alive = z > t
    w = np.zeros_like(z)
    if died.any():
        w[died] = _inverse(_censoring_survival_left(z, d, z[died]), w_max)
    if alive.any():
        w[alive] = _inverse(kaplan_meier(z, 1.0 - d)(t), w_max)
    return float(np.sum(w * (alive.astype(float) - pred) ** 2) / z.size)


def ibs(prediction_fn, times, event_flags, t_max: float | None = None, grid_size: int = 100) -> float:
    """Trapezoidal time-average of the Brier score over [0, t_max].

    ``prediction_fn(t)`` returns predicted survival at t for every record.
    ``t_max`` defaults to the largest uncensored time.
    """
    z = np.asarray(times, dtype=float)
    d = np.asarray(event_flags, dtype=float)
    if t_max is None:
        if not d.any():
            raise UndefinedMetricError("no events to set t_max")
        t_max = float(z[d == 1].max())
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    grid = np.linspace(0.0, t_max, grid_size)
    scores = np.array([brier(t, prediction_fn(t), z, d) for t in grid])
    return float(integrate.trapezoid(scores, grid) / t_max)


def td_auc(t: float, scores, times, event_flags, w_max: float = W_MAX) -> float:
    """Cumulative/dynamic AUC at t with IPCW-weighted cases (z < t, event) and controls z > t."""
    s = np.asarray(scores, dtype=float)
    z = np.asarray(times, dtype=float)
    d = np.asarray(event_flags, dtype=float)
    cases = (z < t) & (d == 1)
    controls = z > t
    if not cases.any() or not controls.any():
        raise UndefinedMetricError(f"no cases or no controls at t={t}")
    w = _inverse(_censoring_survival_left(z, d, z[cases]), w_max)
    diff = s[cases][:, None] - s[controls][None, :]
    win = np.where(diff > 0, 1.0, np.where(diff == 0, 0.5, 0.0))
    return float((w[:, None] * win).sum() / (w.sum() * controls.sum()))


def ks_uniform(sample) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against U(0, 1); asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    cdf = np.clip(x, 0.0, 1.0)
    i = np.arange(1, n + 1)
    stat = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return float(stat), float(special.kolmogorov(math.sqrt(n) * stat))


# ---------------------------------------------------------------------------
# model-based statistics


def risk_scores(eta, beta):
    """Negative predicted mean duration (higher means riskier)."""
    return -weibull.mean(np.asarray(eta, dtype=float), np.asarray(beta, dtype=float))


def xi_statistic(params: dict, spec: ArchSpec, X, z, delta=None) -> np.ndarray:
    """1 - S(z | x) per record; only events are kept when ``delta`` is given."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    if delta is not None:
        keep = np.asarray(delta) == 1
        X, z = X[keep], z[keep]
    out = forward_batch(params, spec, X)
    return weibull.cdf(z, out.eta, out.beta)


def mcd_draws(params: dict, spec: ArchSpec, X, M: int, dropout_rate: float, rng: np.random.Generator):
    """M dropout-perturbed forward passes; returns (eta, beta) arrays of shape (M, m)."""
    X = np.asarray(X, dtype=float)
    if M < 1:
        raise ValueError("M must be at least 1")
    drop_spec = with_dropout(spec, dropout_rate)
    etas, betas = [], []
    for _ in range(M):
        masks = sample_dropout_masks(drop_spec, X.shape[0], rng) if dropout_rate > 0 else None
        out = forward_batch(params, drop_spec, X, masks)
        etas.append(out.eta)
        betas.append(out.beta)
    return np.array(etas), np.array(betas)


def xi_mcd(params: dict, spec: ArchSpec, X, z, M: int, dropout_rate: float, rng: np.random.Generator,
           delta=None) -> np.ndarray:
    """Dropout-averaged xi: 1 - mean_m S_m(z | x)."""
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    if delta is not None:
        keep = np.asarray(delta) == 1
        X, z = X[keep], z[keep]
    if dropout_rate == 0:
        # every replicate is the deterministic pass; averaging would only add rounding
        if M < 1:
            raise ValueError("M must be at least 1")
        return xi_statistic(params, spec, X, z)
    etas, betas = mcd_draws(params, spec, X, M, dropout_rate, rng)
    return weibull.cdf(z[None, :], etas, betas).mean(axis=0)


@dataclass
class PredictiveBand:
    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def mcd_predictive(params: dict, spec: ArchSpec, X, time_grid, M: int, dropout_rate: float,
                   rng: np.random.Generator, level: float = 0.95) -> PredictiveBand:
    """MC-dropout survival curves summarized per record and time.

    Arrays have shape (m, len(time_grid)); variance uses the 1/M form.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grid = np.asarray(time_grid, dtype=float)
    etas, betas = mcd_draws(params, spec, X, M, dropout_rate, rng)
    curves = weibull.survival(grid[None, None, :], etas[:, :, None], betas[:, :, None])
    if dropout_rate == 0:
        mean, var = curves[0].copy(), np.zeros_like(curves[0])
    else:
        mean = curves.mean(axis=0)
        var = ((curves - mean) ** 2).mean(axis=0)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(curves, [alpha, 1.0 - alpha], axis=0)
    return PredictiveBand(grid, mean, var, lo, hi)


def evaluate(params: dict, spec: ArchSpec, X, z, delta, auc_points: int = 20, ibs_grid: int = 100,
             mcd_samples: int = 0, dropout_rate: float = 0.05, rng: np.random.Generator | None = None) -> dict:
    """Metric bundle for one dataset (typically the held-out last missions).

    With ``mcd_samples > 0`` the xi summary uses MC-dropout averaging.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    delta = np.asarray(delta, dtype=float)
    out = forward_batch(params, spec, X)
    scores = risk_scores(out.eta, out.beta)
    report: dict = {"n": int(z.size), "n_events": int(delta.sum())}
    try:
        report["c_index"] = c_index(scores, z, delta)
    except UndefinedMetricError:
        report["c_index"] = None
    try:
        report["ibs"] = ibs(lambda t: weibull.survival(t, out.eta, out.beta), z, delta, grid_size=ibs_grid)
    except UndefinedMetricError:
        report["ibs"] = None
    grid = np.quantile(z, np.linspace(0.05, 0.95, auc_points))
    auc_grid = []
    for t in grid:
        try:
            auc_grid.append({"t": float(t), "auc": td_auc(t, scores, z, delta)})
        except UndefinedMetricError:
            continue
    report["auc_grid"] = auc_grid
    report["auc_mean"] = float(np.mean([a["auc"] for a in auc_grid])) if auc_grid else None
    if mcd_samples > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        xi = xi_mcd(params, spec, X, z, mcd_samples, dropout_rate, rng, delta=delta)
    else:
        xi = xi_statistic(params, spec, X, z, delta=delta)
    if xi.size:
        report["xi_summary"] = {
            "median": float(np.median(xi)),
            "q05": float(np.quantile(xi, 0.05)),
            "q95": float(np.quantile(xi, 0.95)),
            "ks_p": ks_uniform(xi)[1],
        }
    else:
        report["xi_summary"] = None
    return report
