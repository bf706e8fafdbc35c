"""Synthetic fleets drawn from a known network, and parameter-recovery statistics."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import weibull
from .dataset import SurvivalDataset
from .network import (ArchSpec, CovariatePartition, build_arch, effective_params, forward_batch,
                      free_from_effective, param_shapes, trainable_names)

# reference fleet used to scale the vehicle count: 5000 vehicles for 95000 missions
REFERENCE_VEHICLES = 5000
REFERENCE_MISSIONS = 95000


@dataclass(frozen=True)
class SimConfig:
    d_a: int = 5
    d_n: int = 2
    n_s: int = 2000
    L_s: int = 3
    Delta: float = 0.05
    alpha_tilde: float = 0.9
    N_s: int | None = None
    seed: int = 0
    n_categories: int | None = None

    def __post_init__(self):
        if not 0 <= self.Delta < 1:
            raise ValueError("Delta must lie in [0, 1)")
        if not 0 < self.alpha_tilde < 1:
            raise ValueError("alpha_tilde must lie in (0, 1)")
        if self.d_n < 0 or self.d_n > self.d_a or self.d_a < 1:
            raise ValueError("need 0 <= d_n <= d_a and d_a >= 1")
        if self.d_n < self.d_a and self.categories < 2:
            raise ValueError("the categorical block needs at least two columns")
        if not 1 <= self.vehicles <= self.n_s:
            raise ValueError("need 1 <= N_s <= n_s")

    @property
    def vehicles(self) -> int:
        if self.N_s is not None:
            return self.N_s
        return max(1, round(self.n_s * REFERENCE_VEHICLES / REFERENCE_MISSIONS))

    @property
    def categories(self) -> int:
        return self.d_a - self.d_n if self.n_categories is None else self.n_categories

    @property
    def name(self) -> str:
        return f"SIM-{self.d_a}-{self.d_n}-{self.n_s}-{self.L_s}-{self.Delta:g}"

    def partition(self) -> CovariatePartition:
        """Numerical columns are survival-monotone, the one-hot block is nominal."""
        return CovariatePartition(tuple(range(self.d_n)), (), tuple(range(self.d_n, self.d_a)), self.d_a)

    def arch(self, **spec_kwargs) -> ArchSpec:
        """Generating architecture: sieve widths for n_s with depth L_s."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return build_arch(self.n_s, self.d_a, depth=self.L_s, partition=self.partition(), **spec_kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroundTruth:
    config: SimConfig
    spec: ArchSpec
    params: dict
    dataset: SurvivalDataset
    t_uncensored: np.ndarray
    eta: np.ndarray
    beta: np.ndarray


# ---------------------------------------------------------------------------
# generators


def truncated_normal(rng: np.random.Generator, mean: float, sd: float, size) -> np.ndarray:
    """Normal(mean, sd) truncated to (0, inf), by inverse CDF."""
    a = -mean / sd
    lower = stats.norm.cdf(a)
    u = rng.random(size)
    x = mean + sd * stats.norm.ppf(lower + u * (1.0 - lower))
    return np.maximum(x, np.finfo(float).tiny)


def simulate_params(spec: ArchSpec, rng: np.random.Generator, weight_mean: float = 0.1, weight_sd: float = 0.1,
                    bias_mean: float = 10.0, bias_sd: float = 5.0) -> dict:
    """Ground-truth parameters: positive truncated-normal weights, wide normal biases.

    Draws are taken on the effective scale and mapped back to free
    parameters through the inverse softplus where a sign constraint applies.
    The eta-head vector is drawn the same way (its sign is free).
    """
    effective = {}
    for name, shape in param_shapes(spec).items():
        if name.endswith(".bn_scale") or name.endswith(".bn_var"):
            effective[name] = np.ones(shape)
        elif name.endswith(".bn_shift") or name.endswith(".bn_mean"):
            effective[name] = np.zeros(shape)
        elif name.endswith("bias"):
            effective[name] = rng.normal(bias_mean, bias_sd, size=shape)
        else:
            effective[name] = truncated_normal(rng, weight_mean, weight_sd, shape)
    return free_from_effective(effective, spec)


def allocate_missions(n_s: int, N_s: int, rng: np.random.Generator) -> np.ndarray:
    """Balanced multinomial split of n_s missions over N_s vehicles."""
    if N_s < 1:
        raise ValueError("need at least one vehicle")
    return rng.multinomial(n_s, np.full(N_s, 1.0 / N_s))


def synthetic_covariates(config: SimConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-inflated lognormal numericals followed by a uniform one-hot categorical."""
    num = rng.lognormal(0.0, 1.0, size=(count, config.d_n))
    num[rng.random((count, config.d_n)) < 0.3] = 0.0
    X = np.zeros((count, config.d_a))
    X[:, :config.d_n] = num
    if config.d_n < config.d_a:
        cats = rng.integers(0, config.categories, size=count)
        X[np.arange(count), config.d_n + cats] = 1.0
    return X


class CovariatePool:
    """Draw covariate rows without replacement from a fixed matrix."""

    def __init__(self, rows):
        self.rows = np.asarray(rows, dtype=float)
        self.pos = 0

    def __call__(self, config: SimConfig, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.pos + count > self.rows.shape[0]:
            raise ValueError(f"covariate pool exhausted: needed {count} rows, {self.rows.shape[0] - self.pos} left")
        out = self.rows[self.pos:self.pos + count]
        self.pos += count
        return out


def simulate_dataset(config: SimConfig, params: dict | None = None, spec: ArchSpec | None = None,
                     covariate_source=synthetic_covariates) -> GroundTruth:
    """Fleet of missions from a known network.

    Each vehicle gets its own child seed, so its rows do not depend on how
    many vehicles precede it.  For every mission a Weibull duration is drawn
    first; then with probability Delta the mission is censored at the
    alpha_tilde quantile of its own conditional distribution.
    """
    root = np.random.SeedSequence(config.seed)
    param_seed, alloc_seed, vehicle_seed = root.spawn(3)
    spec = config.arch() if spec is None else spec
    if params is None:
        params = simulate_params(spec, np.random.default_rng(param_seed))
    counts = allocate_missions(config.n_s, config.vehicles, np.random.default_rng(alloc_seed))
    vids, xs, us, cs = [], [], [], []
    for v, (count, child) in enumerate(zip(counts, vehicle_seed.spawn(len(counts)))):
        if count == 0:
            continue
        rng = np.random.default_rng(child)
        xs.append(covariate_source(config, int(count), rng))
        us.append(rng.random(count))
        cs.append(rng.random(count) < config.Delta)
        vids.append(np.full(count, v))
    X = np.concatenate(xs)
    out = forward_batch(params, spec, X)
    t = weibull.quantile(np.concatenate(us), out.eta, out.beta)
    censored = np.concatenate(cs)
    y = weibull.quantile(config.alpha_tilde, out.eta, out.beta)
    z = np.where(censored, y, t)
    delta = (~censored).astype(float)
    data = SurvivalDataset(np.concatenate(vids), X, z, delta)
    return GroundTruth(config, spec, params, data, t, out.eta, out.beta)


# ---------------------------------------------------------------------------
# recovery statistics


def parameter_vector(params: dict, spec: ArchSpec) -> np.ndarray:
    """Effective trainable parameters flattened layer by layer, row-major, heads last."""
    eff = effective_params(params, spec)
    return np.concatenate([np.ravel(eff[n]) for n in trainable_names(spec)])


def _pairs(theta_hats, theta):
    theta = np.asarray(theta, dtype=float).ravel()
    hats = np.atleast_2d(np.asarray(theta_hats, dtype=float))
    if hats.shape[1] != theta.size:
        raise ValueError("estimate and truth vectors differ in length")
    return hats, theta


def smdape(theta_hats, theta) -> float:
    """Median over estimates of ||a - b|| / (||a|| + ||b||), 0 when both are zero."""
    hats, theta = _pairs(theta_hats, theta)
    vals = []
    for h in hats:
        denom = np.linalg.norm(h) + np.linalg.norm(theta)
        vals.append(np.linalg.norm(h - theta) / denom if denom > 0 else 0.0)
    return float(np.median(vals))


def cos_alignment(theta_hats, theta) -> float:
    """Median cosine similarity; 1 when both vectors are zero, 0 when only one is."""
    hats, theta = _pairs(theta_hats, theta)
    nt = np.linalg.norm(theta)
    vals = []
    for h in hats:
        nh = np.linalg.norm(h)
        if nh == 0 and nt == 0:
            vals.append(1.0)
        elif nh == 0 or nt == 0:
            vals.append(0.0)
        else:
            vals.append(float(np.clip(h @ theta / (nh * nt), -1.0, 1.0)))
    return float(np.median(vals))
