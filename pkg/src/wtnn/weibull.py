"""Weibull distribution kernel shared by the network, losses and metrics.

Everything here works on floats or numpy arrays in float64.  Powers of the
form ``(t / eta) ** beta`` are evaluated as ``exp(beta * (log t - log eta))``
so that large shapes do not overflow before the exponential.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

NLL_CAP = 1e12

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a function."""


@dataclass(frozen=True)
class WeibullParams:
    eta: float
    beta: float

    def __post_init__(self):
        if not (self.eta > 0 and self.beta > 0):
            raise DomainError(f"Weibull parameters must be positive, got eta={self.eta}, beta={self.beta}")


@dataclass(frozen=True)
class Beta0Constants:
    xi: float
    beta0: float


def _check_positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite")
    return arr


def _lanczos_log_gamma(x):
    # valid for x >= 0.5
    x = x - 1.0
    a = np.full_like(x, _LANCZOS_COEF[0])
    for k, c in enumerate(_LANCZOS_COEF[1:], start=1):
        a = a + c / (x + k)
    t = x + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (x + 0.5) * np.log(t) - t + np.log(a)


def log_gamma(x):
    """log Gamma(x) for x > 0, via Lanczos with reflection below 1/2."""
    arr = _check_positive(x)
    out = np.empty_like(arr)
    small = arr < 0.5
    big = ~small
    out[big] = _lanczos_log_gamma(arr[big])
    xs = arr[small]
    out[small] = np.log(np.pi / np.sin(np.pi * xs)) - _lanczos_log_gamma(1.0 - xs)
    return out if np.ndim(x) else float(out)


def gamma_fn(x):
    """Gamma function on (0, inf), relative accuracy around 1e-14."""
    out = np.exp(log_gamma(x))
    return out if np.ndim(out) else float(out)


def beta0() -> Beta0Constants:
    """Location of the minimum of Gamma on (0, inf) and the shape threshold 1/(xi - 1).

    The minimum is where the digamma function vanishes, so it is found as a
    root rather than by minimizing a flat function.
    """
    xi = optimize.brentq(special.digamma, 1.0, 2.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return Beta0Constants(xi=xi, beta0=1.0 / (xi - 1.0))


# the rounded value xi = 3/2 gives this threshold
BETA0_ROUNDED = 2.0
BETA0 = beta0().beta0


def _log_ratio(t, eta, beta):
    with np.errstate(divide="ignore"):
        return beta * (np.log(t) - np.log(eta))


def cumulative_hazard(t, eta, beta):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    return np.exp(_log_ratio(t, eta, beta))


def survival(t, eta, beta=None):
    """exp(-(t/eta)^beta).

    Accepts either ``survival(t, WeibullParams)`` or ``survival(t, eta, beta)``
    with broadcastable arrays.
    """
    if isinstance(eta, WeibullParams):
        eta, beta = eta.eta, eta.beta
    out = np.exp(-cumulative_hazard(t, eta, beta))
    return out if np.ndim(out) else float(out)


def cdf(t, eta, beta=None):
    if isinstance(eta, WeibullParams):
        eta, beta = eta.eta, eta.beta
    out = -np.expm1(-cumulative_hazard(t, eta, beta))
    return out if np.ndim(out) else float(out)


def quantile(p, eta, beta=None):
    if isinstance(eta, WeibullParams):
        eta, beta = eta.eta, eta.beta
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p >= 1):
        raise DomainError("probability must lie in [0, 1)")
    out = eta * np.power(-np.log1p(-p), 1.0 / np.asarray(beta, dtype=float))
    return out if np.ndim(out) else float(out)


def mean(eta, beta=None):
    if isinstance(eta, WeibullParams):
        eta, beta = eta.eta, eta.beta
    beta = np.asarray(beta, dtype=float)
    out = eta * np.exp(log_gamma(1.0 + 1.0 / beta))
    return out if np.ndim(out) else float(out)


def sample(rng: np.random.Generator, eta, beta=None, size=None):
    """Inverse-CDF draws; ``size`` defaults to the broadcast shape of the parameters."""
    if isinstance(eta, WeibullParams):
        eta, beta = eta.eta, eta.beta
    if size is None:
        size = np.broadcast(np.asarray(eta), np.asarray(beta)).shape or None
    u = rng.random(size)
    return quantile(u, eta, beta)


def censored_nll(z, delta, eta, beta=None, cap=NLL_CAP, return_saturation=False):
    """Negative log-likelihood of one (or many) right-censored observations.

    Events contribute the negative log density, censored rows the negative
    log survival.  Values above ``cap`` are clamped; pass
    ``return_saturation=True`` to also get a boolean mask of clamped terms.
    """
    if isinstance(eta, WeibullParams):
        eta, beta = eta.eta, eta.beta
    z = np.asarray(z, dtype=float)
    if np.any(~(z > 0)):
        raise DomainError("durations must be positive")
    delta = np.asarray(delta, dtype=float)
    log_ratio = np.log(z) - np.log(eta)
    density_term = np.log(beta) - np.log(eta) + (beta - 1.0) * log_ratio
    with np.errstate(over="ignore"):
        value = -delta * density_term + np.exp(beta * log_ratio)
    saturated = ~(value <= cap)
    value = np.where(saturated, cap, value)
    if np.ndim(value) == 0:
        value = float(value)
        saturated = bool(saturated)
    if return_saturation:
        return value, saturated
    return value
