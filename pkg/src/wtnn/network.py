"""Weibull-tailored two-headed network: sizing, parameters, constrained forward pass.

A ``ParamSet`` is a plain ``dict`` mapping parameter names to numpy arrays.
Sign-constrained weights are stored in a free (unconstrained) form and mapped
through softplus in the forward pass.  Use :func:`param_names` for the
canonical ordering and :func:`effective_params` for the constrained values.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .weibull import BETA0

BN_EPS = 1e-5


class SizingError(ValueError):
    pass


@dataclass(frozen=True)
class CovariatePartition:
    """Input positions of survival-monotone ordinals, other ordinals, and one-hot blocks."""

    oa_indices: tuple[int, ...]
    ob_indices: tuple[int, ...]
    nom_indices: tuple[int, ...]
    d: int

    def __post_init__(self):
        oa, ob, nom = set(self.oa_indices), set(self.ob_indices), set(self.nom_indices)
        if oa & ob or oa & nom or ob & nom:
            raise ValueError("covariate index sets must be disjoint")
        if oa | ob | nom != set(range(self.d)):
            raise ValueError(f"covariate index sets must cover 0..{self.d - 1}")

    @classmethod
    def all_monotone(cls, d: int) -> "CovariatePartition":
        return cls(tuple(range(d)), (), (), d)


@dataclass(frozen=True)
class ArchSpec:
    widths: tuple[int, ...]
    partition: CovariatePartition
    eta_min: float = 1.0
    beta_min: float = 1.0
    beta_max: float = 6.0
    head_style: str = "linear"
    head_units: int = 4
    dropout_rate: float = 0.0
    use_batch_norm: bool = False
    positive_weights: bool = True
    beta_threshold: float = BETA0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not self.widths or min(self.widths) < 1:
            raise ValueError("need at least one hidden layer with positive width")
        if not self.eta_min > 0:
            raise ValueError("eta_min must be positive")
        if not self.beta_min < self.beta_max:
            raise ValueError("beta_min must be below beta_max")
        if self.head_style not in ("linear", "mini_mlp"):
            raise ValueError(f"unknown head style {self.head_style!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def d(self) -> int:
        return self.partition.d

    @property
    def depth(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["widths"] = list(self.widths)
        out["partition"] = {k: list(v) if isinstance(v, tuple) else v for k, v in out["partition"].items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ArchSpec":
        data = dict(data)
        p = data.pop("partition")
        part = CovariatePartition(
            tuple(p["oa_indices"]), tuple(p["ob_indices"]), tuple(p["nom_indices"]), int(p["d"])
        )
        return cls(partition=part, **data)


# ---------------------------------------------------------------------------
# sizing


def k0(d: int, n_min: float) -> float:
    return 2.0 * d**2 * math.log(n_min) * n_min ** (-1.0 / 3.0)


def layer_widths(n: float, K: float, rho: float = 0.5, tau: float = 0.5, depth: int | None = None,
                 width_log=math.log, depth_log=math.log2) -> list[int]:
    """Pyramidal widths with geometric decay; depth polylogarithmic in n."""
    m1 = math.ceil(math.sqrt(K / 2.0) * n ** (1.0 / 6.0) / math.sqrt(width_log(n)))
    if depth is None:
        depth = min(math.ceil(depth_log(n) ** tau), 1 + (m1 - 2))
    widths = [m1]
    for ell in range(2, depth + 1):
        if widths[-1] <= 2:
            # the floor width is reached; deeper layers could not shrink further
            break
        widths.append(max(2, min(math.ceil(m1 * rho ** (ell - 1)), widths[-1] - 1)))
    return widths


def build_arch(n: int, d: int, K: float = 128.0, rho: float = 0.5, tau: float = 0.5, n_min: int = 2,
               depth: int | None = None, partition: CovariatePartition | None = None,
               width_log=math.log, depth_log=math.log2, **spec_kwargs) -> ArchSpec:
    """Size a network for ``n`` observations of dimension ``d``.

    Width uses the natural log and depth log base 2 by default; the other
    combinations do not match the reference sizings.  ``depth`` overrides
    the depth rule.
    """
    if n <= n_min:
        raise SizingError(f"sample size n={n} must exceed n_min={n_min}")
    if not 0 < rho < 1 or not 0 < tau < 1:
        raise SizingError("rho and tau must lie in (0, 1)")
    if K < k0(d, n_min):
        warnings.warn(f"K={K} is below K0={k0(d, n_min):.4g} for d={d}, n_min={n_min}", stacklevel=2)
    widths = layer_widths(n, K, rho, tau, depth, width_log, depth_log)
    if widths[0] < d:
        raise SizingError(
            f"first-layer width m1={widths[0]} is below the input dimension d={d}; increase K "
            f"(K >= {2 * d**2 * math.log(n) / n ** (1 / 3):.4g} gives m1 >= d)"
        )
    if partition is None:
        partition = CovariatePartition.all_monotone(d)
    return ArchSpec(widths=tuple(widths), partition=partition, **spec_kwargs)


def param_count(spec: ArchSpec) -> int:
    """Sieve parameter count m1(d+1) + sum_{l=2}^{L-1} m_l(m_{l-1}+1) + 2 m_L."""
    w = spec.widths
    total = w[0] * (spec.d + 1)
    for ell in range(1, len(w) - 1):
        total += w[ell] * (w[ell - 1] + 1)
    return total + 2 * w[-1]


def trainable_count(spec: ArchSpec) -> int:
    """Actual number of trained scalars, including head biases and the last layer."""
    shapes = param_shapes(spec)
    return sum(int(np.prod(shapes[n])) for n in trainable_names(spec))


# ---------------------------------------------------------------------------
# parameters


def param_shapes(spec: ArchSpec) -> dict[str, tuple]:
    shapes: dict[str, tuple] = {}
    prev = spec.d
    for ell, m in enumerate(spec.widths, start=1):
        shapes[f"layer{ell}.weight"] = (m, prev)
        shapes[f"layer{ell}.bias"] = (m,)
        if spec.use_batch_norm:
            shapes[f"layer{ell}.bn_scale"] = (m,)
            shapes[f"layer{ell}.bn_shift"] = (m,)
            shapes[f"layer{ell}.bn_mean"] = (m,)
            shapes[f"layer{ell}.bn_var"] = (m,)
        prev = m
    for head in ("beta_head", "eta_head"):
        if spec.head_style == "mini_mlp":
            shapes[f"{head}.hidden_weight"] = (spec.head_units, prev)
            shapes[f"{head}.hidden_bias"] = (spec.head_units,)
            shapes[f"{head}.weight"] = (spec.head_units,)
        else:
            shapes[f"{head}.weight"] = (prev,)
        shapes[f"{head}.bias"] = ()
    return shapes


def param_names(spec: ArchSpec) -> list[str]:
    """Canonical order: layers in order (weight, bias, batch-norm), then beta head, then eta head."""
    return list(param_shapes(spec))


def buffer_names(spec: ArchSpec) -> set[str]:
    """Running batch-norm statistics; stored with the parameters but not trained."""
    return {n for n in param_shapes(spec) if n.endswith((".bn_mean", ".bn_var"))}


def trainable_names(spec: ArchSpec) -> list[str]:
    buffers = buffer_names(spec)
    return [n for n in param_names(spec) if n not in buffers]


def constraint_mask(spec: ArchSpec, name: str) -> np.ndarray | None:
    """0/1 array marking entries of ``name`` that pass through softplus, or None."""
    if not spec.positive_weights:
        return None
    shape = param_shapes(spec)[name]
    if name == "layer1.weight":
        mask = np.zeros(shape)
        mask[:, list(spec.partition.oa_indices)] = 1.0
        return mask
    if name.startswith("layer") and name.endswith(".weight"):
        return np.ones(shape)
    if name in ("beta_head.weight", "beta_head.hidden_weight", "eta_head.hidden_weight"):
        return np.ones(shape)
    return None


def softplus_np(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def effective_params(params: dict, spec: ArchSpec) -> dict[str, np.ndarray]:
    """Parameters after the positivity mapping (eta-head weight left as the free vector V)."""
    out = {}
    for name in param_names(spec):
        value = np.asarray(params[name], dtype=float)
        mask = constraint_mask(spec, name)
        if mask is not None:
            value = np.where(mask > 0, softplus_np(value), value)
        out[name] = value
    return out


def free_from_effective(effective: dict, spec: ArchSpec) -> dict[str, np.ndarray]:
    """Inverse of :func:`effective_params`; constrained entries must be positive."""
    out = {}
    for name in param_names(spec):
        value = np.asarray(effective[name], dtype=float)
        mask = constraint_mask(spec, name)
        if mask is not None:
            if np.any(value[mask > 0] <= 0):
                raise ValueError(f"constrained entries of {name} must be positive")
            value = np.where(mask > 0, softplus_inv(np.where(mask > 0, value, 1.0)), value)
        out[name] = value
    return out


def flatten(params: dict, spec: ArchSpec, names=None) -> np.ndarray:
    names = trainable_names(spec) if names is None else names
    return np.concatenate([np.ravel(params[n]) for n in names])


def unflatten(vector: np.ndarray, spec: ArchSpec, names=None) -> dict[str, np.ndarray]:
    names = trainable_names(spec) if names is None else names
    shapes = param_shapes(spec)
    out, pos = {}, 0
    for n in names:
        size = int(np.prod(shapes[n]))
        out[n] = np.asarray(vector[pos:pos + size]).reshape(shapes[n])
        pos += size
    return out


def init_params(spec: ArchSpec, rng: np.random.Generator, weight_scale: float = 0.001,
                bias_scale: float = 0.1) -> dict[str, np.ndarray]:
    """Small weights, comparatively large biases.

    Weights are drawn as N(0, weight_scale^2) on the effective scale; for
    sign-constrained entries the magnitude is used (floored at 1e-8) and
    mapped back through the inverse softplus.  Biases are
    N(bias_scale, (0.1 * bias_scale)^2).  Batch-norm scales start at 1,
    shifts and running means at 0, running variances at 1.
    """
    if weight_scale < 0 or bias_scale < 0:
        raise ValueError("scales must be non-negative")
    params = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith((".bn_scale", ".bn_var")):
            params[name] = np.ones(shape)
        elif name.endswith((".bn_shift", ".bn_mean")):
            params[name] = np.zeros(shape)
        elif name.endswith("bias"):
            params[name] = rng.normal(bias_scale, 0.1 * bias_scale, size=shape)
        else:
            w = rng.normal(0.0, weight_scale, size=shape) if weight_scale > 0 else np.zeros(shape)
            mask = constraint_mask(spec, name)
            if mask is not None:
                pos = np.maximum(np.abs(w), 1e-8)
                w = np.where(mask > 0, softplus_inv(pos), w)
            params[name] = w
    return params


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class NetGraph:
    """Tape variables of one batched forward pass."""

    tape: ad.Tape
    params: dict[str, ad.Var]
    x: ad.Var
    eta: ad.Var
    beta: ad.Var
    mask: ad.Var
    hidden: ad.Var
    head_beta_weight: ad.Var
    head_eta_weight: ad.Var
    bn_stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


@dataclass
class NetOutput:
    eta: np.ndarray
    beta: np.ndarray
    mask: np.ndarray
    hidden_last: np.ndarray

    def __len__(self):
        return int(np.size(self.eta))

    def row(self, i: int) -> "NetOutput":
        return NetOutput(float(self.eta[i]), float(self.beta[i]), float(self.mask[i]), self.hidden_last[i])


def _constrained(tape: ad.Tape, free: ad.Var, mask: np.ndarray | None) -> ad.Var:
    if mask is None:
        return free
    if np.all(mask > 0):
        return ad.softplus(free)
    m = tape.const(mask)
    return m * ad.softplus(free) + (1.0 - m) * free


def build_graph(params: dict, spec: ArchSpec, X, dropout_masks=None, training: bool = False,
                tape: ad.Tape | None = None) -> NetGraph:
    """Batched forward pass on a fresh (or given) tape.

    ``X`` is an (m, d) array.  ``dropout_masks`` is an optional list with one
    (m, width) 0/1 array per hidden layer; kept units are rescaled by
    1/(1 - dropout_rate).  With batch norm, ``training=True`` normalizes
    with batch statistics (returned in ``bn_stats``), otherwise with the
    running statistics stored in ``params``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != spec.d:
        raise ValueError(f"expected inputs of shape (m, {spec.d}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs must be finite")
    tape = ad.Tape() if tape is None else tape
    leaves = {name: tape.leaf(params[name], name) for name in param_names(spec)}
    x = tape.leaf(X, "x")
    h = x
    bn_stats = {}
    keep = 1.0 - spec.dropout_rate
    for ell in range(1, spec.depth + 1):
        w = _constrained(tape, leaves[f"layer{ell}.weight"], constraint_mask(spec, f"layer{ell}.weight"))
        pre = h @ w.T + leaves[f"layer{ell}.bias"]
        if spec.use_batch_norm:
            if training:
                mu = pre.mean(axis=0)
                centered = pre - mu
                var = (centered * centered).mean(axis=0)
                bn_stats[f"layer{ell}"] = (mu.value.copy(), var.value.copy())
            else:
                centered = pre - leaves[f"layer{ell}.bn_mean"]
                var = leaves[f"layer{ell}.bn_var"]
            pre = centered / (var + BN_EPS) ** 0.5 * leaves[f"layer{ell}.bn_scale"] + leaves[f"layer{ell}.bn_shift"]
        h = ad.softplus(pre)
        if dropout_masks is not None:
            h = h * tape.const(np.asarray(dropout_masks[ell - 1], dtype=float) / keep)

    span = spec.beta_max - spec.beta_min
    if spec.head_style == "mini_mlp":
        r = float(spec.head_units)
        vb = _constrained(tape, leaves["beta_head.hidden_weight"], constraint_mask(spec, "beta_head.hidden_weight"))
        ub = _constrained(tape, leaves["beta_head.weight"], constraint_mask(spec, "beta_head.weight"))
        gb = ad.softplus(h @ vb.T + leaves["beta_head.hidden_bias"])
        beta = spec.beta_min + span * ad.sigmoid(gb @ ub / r + leaves["beta_head.bias"])
        mask = ad.step(beta - spec.beta_threshold)
        ve = _constrained(tape, leaves["eta_head.hidden_weight"], constraint_mask(spec, "eta_head.hidden_weight"))
        ge = ad.softplus(h @ ve.T + leaves["eta_head.hidden_bias"])
        u = leaves["eta_head.weight"]
        eta_pre = mask * (ge @ (-ad.abs_(u))) + (1.0 - mask) * (ge @ u)
        eta = spec.eta_min + ad.softplus(eta_pre / r + leaves["eta_head.bias"])
        head_beta, head_eta = ub, u
    else:
        wb = _constrained(tape, leaves["beta_head.weight"], constraint_mask(spec, "beta_head.weight"))
        beta = spec.beta_min + span * ad.sigmoid(h @ wb + leaves["beta_head.bias"])
        mask = ad.step(beta - spec.beta_threshold)
        v = leaves["eta_head.weight"]
        eta_pre = mask * (h @ (-ad.abs_(v))) + (1.0 - mask) * (h @ v)
        eta = spec.eta_min + ad.softplus(eta_pre + leaves["eta_head.bias"])
        head_beta, head_eta = wb, v
    return NetGraph(tape, leaves, x, eta, beta, mask, h, head_beta, head_eta, bn_stats)


def forward_batch(params: dict, spec: ArchSpec, X, dropout_masks=None) -> NetOutput:
    """Row-wise (eta, beta, mask, last hidden layer) for an (m, d) input matrix."""
    g = build_graph(params, spec, X, dropout_masks=dropout_masks)
    return NetOutput(g.eta.value.copy(), g.beta.value.copy(), g.mask.value.copy(), g.hidden.value.copy())


def forward(params: dict, spec: ArchSpec, x, dropout_masks=None) -> NetOutput:
    """Single-input forward pass returning scalar eta, beta and mask."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.d,):
        raise ValueError(f"expected an input vector of length {spec.d}, got shape {x.shape}")
    masks = None if dropout_masks is None else [np.reshape(m, (1, -1)) for m in dropout_masks]
    return forward_batch(params, spec, x[None, :], masks).row(0)


def sample_dropout_masks(spec: ArchSpec, m: int, rng: np.random.Generator):
    """Bernoulli keep-masks at ``spec.dropout_rate`` for every hidden layer."""
    return [(rng.random((m, w)) >= spec.dropout_rate).astype(float) for w in spec.widths]


def with_dropout(spec: ArchSpec, rate: float) -> ArchSpec:
    return replace(spec, dropout_rate=rate)
