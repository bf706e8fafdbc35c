"""Training objective: censored Weibull NLL plus four penalties, all on the tape."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .network import ArchSpec, NetGraph, build_graph, trainable_names
from .weibull import NLL_CAP


@dataclass(frozen=True)
class LossWeights:
    lambda_mono: float = 1.0
    lambda_orth: float = 0.1
    lambda_cov: float = 0.01
    lambda_mse: float = 1.0

    def __post_init__(self):
        if min(self.lambda_mono, self.lambda_orth, self.lambda_cov, self.lambda_mse) < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Covariates, observed durations, event flags and IPCW weights for m rows."""

    X: np.ndarray
    z: np.ndarray
    delta: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.z = np.asarray(self.z, dtype=float).ravel()
        self.delta = np.asarray(self.delta, dtype=float).ravel()
        self.w = np.ones_like(self.z) if self.w is None else np.asarray(self.w, dtype=float).ravel()
        m = self.X.shape[0]
        if not (self.z.size == self.delta.size == self.w.size == m):
            raise ValueError("batch arrays must have the same number of rows")
        if m == 0:
            raise ValueError("batch is empty")
        if np.any(~(self.z > 0)):
            raise ValueError("durations must be positive")
        if np.any((self.delta != 0) & (self.delta != 1)):
            raise ValueError("event flags must be 0 or 1")
        if np.any(self.w < 0):
            raise ValueError("IPCW weights must be non-negative")

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Batch":
        return Batch(self.X[idx], self.z[idx], self.delta[idx], self.w[idx])


def nll(g: NetGraph, batch: Batch, reduction: str = "mean", cap: float = NLL_CAP) -> ad.Var:
    """Censored Weibull negative log-likelihood, per-row terms clamped at ``cap``."""
    tape = g.tape
    log_z = tape.const(np.log(batch.z))
    delta = tape.const(batch.delta)
    log_eta = ad.log(g.eta)
    log_ratio = log_z - log_eta
    density = ad.log(g.beta) - log_eta + (g.beta - 1.0) * log_ratio
    expo = g.beta * log_ratio
    small = ad.step(np.log(cap) - expo)
    expo = small * expo + (1.0 - small) * float(np.log(cap))
    term = ad.exp(expo) - delta * density
    below = ad.step(cap - term)
    term = below * term + (1.0 - below) * cap
    if reduction == "sum":
        return term.sum()
    if reduction == "mean":
        return term.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def input_partials(g: NetGraph, k: int) -> tuple[ad.Var, ad.Var]:
    """Per-row d beta / d x_k and d eta / d x_k as differentiable tape nodes."""
    direction = np.zeros(g.x.shape)
    direction[:, k] = 1.0
    d_beta, d_eta = g.tape.jvp([g.beta, g.eta], {g.x: direction})
    return d_beta, d_eta


def mono_penalty(g: NetGraph, spec: ArchSpec) -> ad.Var:
    """Batch mean of hinge-penalized wrong-sign input partials over o_a covariates.

    beta must increase with every o_a covariate; where beta exceeds the
    threshold (mask on) eta must decrease.
    """
    oa = spec.partition.oa_indices
    if not oa:
        warnings.warn("no survival-monotone covariates; monotonicity penalty is zero", stacklevel=2)
        return g.tape.const(0.0)
    total = None
    for k in oa:
        d_beta, d_eta = input_partials(g, k)
        term = ad.max0(-d_beta) + g.mask * ad.max0(d_eta)
        total = term if total is None else total + term
    return total.mean()


def head_cosine_sq(w_beta: ad.Var, w_eta: ad.Var) -> ad.Var:
    denom = (w_beta @ w_beta) * (w_eta @ w_eta)
    if float(denom.value) == 0.0:
        warnings.warn("zero-norm head weight; orthogonality penalty set to 1", stacklevel=2)
        return w_beta.tape.const(1.0)
    inner = w_beta @ w_eta
    return inner * inner / denom


def orth_penalty(g: NetGraph) -> ad.Var:
    """Squared cosine between the effective beta-head weights and the free eta-head vector."""
    return head_cosine_sq(g.head_beta_weight, g.head_eta_weight)


def decov_penalty(hidden: ad.Var) -> ad.Var:
    """Half the squared Frobenius norm of the off-diagonal batch covariance."""
    m, k = hidden.shape
    if m < 2:
        raise ValueError("DeCov needs at least two rows")
    centered = hidden - hidden.mean(axis=0)
    cov = centered.T @ centered / (m - 1.0)
    off_diag = hidden.tape.const(1.0 - np.eye(k))
    return 0.5 * (cov * cov * off_diag).sum()


def mse_ipcw(g: NetGraph, batch: Batch) -> ad.Var:
    """IPCW-weighted squared error between durations and the Weibull mean eta*Gamma(1+1/beta)."""
    tape = g.tape
    predicted = g.eta * ad.exp(ad.lgamma(1.0 + 1.0 / g.beta))
    resid = tape.const(batch.z) - predicted
    return (tape.const(batch.w) * resid * resid).mean()


def total_loss(g: NetGraph, spec: ArchSpec, batch: Batch, weights: LossWeights = LossWeights(),
               reduction: str = "mean") -> tuple[ad.Var, dict[str, ad.Var]]:
    """NLL plus weighted penalties; zero-weighted penalties are not built.

    DeCov is skipped on single-row batches.
    """
    parts = {"nll": nll(g, batch, reduction)}
    loss = parts["nll"]
    if weights.lambda_mono > 0:
        parts["mono"] = mono_penalty(g, spec)
        loss = loss + weights.lambda_mono * parts["mono"]
    if weights.lambda_orth > 0:
        parts["orth"] = orth_penalty(g)
        loss = loss + weights.lambda_orth * parts["orth"]
    if weights.lambda_cov > 0 and len(batch) >= 2:
        parts["cov"] = decov_penalty(g.hidden)
        loss = loss + weights.lambda_cov * parts["cov"]
    if weights.lambda_mse > 0:
        parts["mse"] = mse_ipcw(g, batch)
        loss = loss + weights.lambda_mse * parts["mse"]
    return loss, parts


def loss_and_grad(params: dict, spec: ArchSpec, batch: Batch, weights: LossWeights = LossWeights(),
                  reduction: str = "mean", training: bool = True):
    """Evaluate the objective and its gradient with respect to every trainable parameter.

    Returns ``(loss, grads, parts, bn_stats)`` with plain floats/arrays.
    """
    g = build_graph(params, spec, batch.X, training=training)
    loss, parts = total_loss(g, spec, batch, weights, reduction)
    names = trainable_names(spec)
    grads = g.tape.backward(loss, wrt=[g.params[n] for n in names])
    return (
        float(loss.value),
        dict(zip(names, grads)),
        {k: float(v.value) for k, v in parts.items()},
        g.bn_stats,
    )


def objective(params: dict, spec: ArchSpec, batch: Batch, weights: LossWeights = LossWeights(),
              reduction: str = "mean") -> tuple[float, dict[str, float]]:
    """Loss value without gradients, using inference-mode batch norm."""
    g = build_graph(params, spec, batch.X)
    loss, parts = total_loss(g, spec, batch, weights, reduction)
    return float(loss.value), {k: float(v.value) for k, v in parts.items()}


def monotonicity_violation_rate(params: dict, spec: ArchSpec, X) -> float:
    """Share of (record, o_a covariate) pairs whose input partials have the wrong sign."""
    oa = spec.partition.oa_indices
    if not oa:
        return 0.0
    g = build_graph(params, spec, X)
    mask = g.mask.value
    bad = 0
    for k in oa:
        d_beta, d_eta = input_partials(g, k)
        bad += int(np.sum((d_beta.value < 0) | ((mask > 0) & (d_eta.value > 0))))
    return bad / (X.shape[0] * len(oa))
