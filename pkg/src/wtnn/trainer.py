"""Minibatch Adam with plateau learning-rate cuts, multi-start and NaN guards."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import weibull
from .dataset import SurvivalDataset
from .evaluation import ipcw_weights
from .losses import Batch, LossWeights, loss_and_grad, objective
from .network import ArchSpec, forward_batch, init_params, trainable_names

log = logging.getLogger(__name__)

LR_FLOOR = 1e-8
NAN_ABORT_AFTER = 3


class TrainingFailure(RuntimeError):
    """Every restart aborted on non-finite losses."""

    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = reports or []


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.01
    plateau_factor: float = 0.1
    plateau_patience: int = 10
    max_epochs: int = 500
    batch_size: int = 256
    restarts: int = 5
    seed: int = 0
    grad_clip: float | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    weight_scale: float = 0.001
    bias_scale: float = 0.1
    ipcw_form: str = "inverse_censoring"
    bn_momentum: float = 0.1

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.max_epochs < 0 or self.batch_size < 1 or self.plateau_patience < 1:
            raise ValueError("max_epochs >= 0, batch_size >= 1 and plateau_patience >= 1 are required")
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown training config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RestartReport:
    index: int
    loss_trace: list[float] = field(default_factory=list)
    lr_events: list[dict] = field(default_factory=list)
    incidents: list[dict] = field(default_factory=list)
    aborted: bool = False
    final_objective: float = float("nan")
    final_nll: float = float("inf")
    saturated_rows: int = 0


@dataclass
class TrainReport:
    chosen_restart: int
    loss_trace: list[float]
    final_objective: float
    final_nll: float
    lr_events: list[dict]
    incidents: list[dict]
    restarts: list[RestartReport]
    wall_time: float
    single_mission_vehicles: int = 0

    def to_dict(self, include_timing: bool = True) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_time")
        return out


# ---------------------------------------------------------------------------
# train/test split


def time_split(dataset: SurvivalDataset) -> tuple[SurvivalDataset, SurvivalDataset, int]:
    """Each vehicle's last mission goes to test, earlier ones to train.

    Vehicles with a single mission stay wholly in train; their count is the
    third return value.
    """
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    counts: dict = {}
    for v in dataset.vehicle_ids.tolist():
        counts[v] = counts.get(v, 0) + 1
    last = dataset.last_mission_index()
    test_idx = np.array([i for i in last if counts[dataset.vehicle_ids[i].item()] >= 2], dtype=int)
    is_test = np.zeros(len(dataset), dtype=bool)
    is_test[test_idx] = True
    singles = sum(1 for c in counts.values() if c == 1)
    if singles:
        log.info("%d single-mission vehicles kept in the training split", singles)
    return dataset.subset(np.flatnonzero(~is_test)), dataset.subset(np.flatnonzero(is_test)), singles


# ---------------------------------------------------------------------------
# optimizer pieces


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict, names) -> "AdamState":
        return cls({n: np.zeros_like(params[n]) for n in names}, {n: np.zeros_like(params[n]) for n in names})


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm or norm == 0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(state: AdamState, params: dict, grads: dict, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, grad_clip: float | None = None):
    """One bias-corrected Adam update on the parameters named in ``grads``.

    Returns ``(state, params, skipped)``; non-finite gradients leave both
    untouched and set ``skipped``.
    """
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        return state, params, True
    if grad_clip is not None:
        grads = clip_global_norm(grads, grad_clip)
    t = state.t + 1
    new_m, new_v, new_params = dict(state.m), dict(state.v), dict(params)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    with np.errstate(over="ignore"):
        for name, g in grads.items():
            m = beta1 * state.m[name] + (1.0 - beta1) * g
            v = beta2 * state.v[name] + (1.0 - beta2) * g * g
            new_m[name], new_v[name] = m, v
            new_params[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return AdamState(new_m, new_v, t), new_params, False


class PlateauScheduler:
    """Cut the learning rate when the monitored value stops strictly improving.

    The first observed value is the baseline.  After ``patience``
    consecutive non-improving values the rate is multiplied by ``factor``
    and the counter restarts, so the next cut needs another ``patience``
    epochs.
    """

    def __init__(self, lr0: float, factor: float = 0.1, patience: int = 10, floor: float = LR_FLOOR):
        self.lr = lr0
        self.factor = factor
        self.patience = patience
        self.floor = floor
        self.best = None
        self.bad_epochs = 0

    def step(self, value: float) -> float:
        if self.best is None or value < self.best:
            self.best = value
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.floor)
            self.bad_epochs = 0
        return self.lr


def plateau_scheduler(history, lr0: float = 0.01, factor: float = 0.1, patience: int = 10) -> float:
    """Learning rate after replaying ``history``; ``history[0]`` is the pre-training baseline."""
    sched = PlateauScheduler(lr0, factor, patience)
    for value in history:
        sched.step(value)
    return sched.lr


# ---------------------------------------------------------------------------
# fitting


def train_nll_sum(params: dict, spec: ArchSpec, batch: Batch, with_saturation: bool = False):
    """Exact (summed) negative log-likelihood; optionally also the number of capped rows."""
    out = forward_batch(params, spec, batch.X)
    values, saturated = weibull.censored_nll(batch.z, batch.delta, out.eta, out.beta, return_saturation=True)
    total = float(np.sum(values))
    return (total, int(np.sum(saturated))) if with_saturation else total


def _update_running_stats(params: dict, bn_stats: dict, momentum: float) -> dict:
    if not bn_stats:
        return params
    params = dict(params)
    for layer, (mu, var) in bn_stats.items():
        params[f"{layer}.bn_mean"] = (1 - momentum) * params[f"{layer}.bn_mean"] + momentum * mu
        params[f"{layer}.bn_var"] = (1 - momentum) * params[f"{layer}.bn_var"] + momentum * var
    return params


def _run_restart(index: int, batch: Batch, spec: ArchSpec, config: TrainConfig):
    rng = np.random.default_rng(config.seed + index)
    params = init_params(spec, rng, config.weight_scale, config.bias_scale)
    names = trainable_names(spec)
    report = RestartReport(index)
    weights = config.loss_weights
    state = AdamState.zeros_like(params, names)
    sched = PlateauScheduler(config.lr0, config.plateau_factor, config.plateau_patience)

    value, _ = objective(params, spec, batch, weights)
    report.loss_trace.append(value)
    if not np.isfinite(value):
        report.incidents.append({"epoch": 0, "batch": None, "kind": "nonfinite_initial_objective"})
    else:
        sched.step(value)

    n = len(batch)
    bad_streak = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            sub = batch.subset(order[start:start + config.batch_size])
            with np.errstate(all="ignore"):
                loss, grads, _, bn_stats = loss_and_grad(params, spec, sub, weights)
            lr = sched.lr
            state, new_params, skipped = adam_step(
                state, params, grads, lr, config.adam_beta1, config.adam_beta2, config.adam_eps, config.grad_clip)
            if skipped or not np.isfinite(loss):
                bad_streak += 1
                report.incidents.append({"epoch": epoch, "batch": b, "kind": "nonfinite_loss"})
                log.warning("restart %d epoch %d batch %d: non-finite loss, step skipped", index, epoch, b)
                if bad_streak >= NAN_ABORT_AFTER:
                    report.aborted = True
                    return params, report
                continue
            bad_streak = 0
            params = _update_running_stats(new_params, bn_stats, config.bn_momentum)
        with np.errstate(all="ignore"):
            value, _ = objective(params, spec, batch, weights)
        if not np.isfinite(value):
            report.incidents.append({"epoch": epoch, "batch": None, "kind": "nonfinite_objective"})
            report.aborted = True
            return params, report
        report.loss_trace.append(value)
        before = sched.lr
        after = sched.step(value)
        if after != before:
            report.lr_events.append({"epoch": epoch, "lr": after})
    report.final_objective = report.loss_trace[-1]
    report.final_nll, report.saturated_rows = train_nll_sum(params, spec, batch, with_saturation=True)
    if report.saturated_rows:
        report.incidents.append({"epoch": config.max_epochs, "batch": None, "kind": "nll_saturation",
                                 "rows": report.saturated_rows})
    if not np.isfinite(report.final_nll):
        report.aborted = True
    return params, report


def fit(train: SurvivalDataset, spec: ArchSpec, config: TrainConfig = TrainConfig()):
    """Train ``config.restarts`` initializations and keep the one with the lowest training NLL.

    ``train`` is the training split.  Returns ``(params, TrainReport)`` and
    raises :class:`TrainingFailure` when every restart aborts.
    """
    started = time.perf_counter()
    if len(train) == 0:
        raise ValueError("training set is empty")
    w = ipcw_weights(train.z, train.delta, form=config.ipcw_form)
    batch = train.to_batch(w)
    results = [_run_restart(r, batch, spec, config) for r in range(config.restarts)]
    completed = [(rep.final_nll, rep.index) for _, rep in results if not rep.aborted]
    reports = [rep for _, rep in results]
    if not completed:
        raise TrainingFailure(f"all {config.restarts} restarts aborted on non-finite losses", reports)
    _, best = min(completed)
    params, chosen = results[best]
    report = TrainReport(
        chosen_restart=best,
        loss_trace=chosen.loss_trace,
        final_objective=chosen.final_objective,
        final_nll=chosen.final_nll,
        lr_events=chosen.lr_events,
        incidents=[i for rep in reports for i in ({**x, "restart": rep.index} for x in rep.incidents)],
        restarts=reports,
        wall_time=time.perf_counter() - started,
    )
    return params, report


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
