import numpy as np
import pytest

from conftest import small_spec
from wtnn import trainer
from wtnn.dataset import SurvivalDataset
from wtnn.losses import objective
from wtnn.network import init_params
from wtnn.simulator import SimConfig, simulate_dataset
from wtnn.trainer import AdamState, PlateauScheduler, TrainConfig, TrainingFailure


def _fleet(sizes):
    vids = np.concatenate([[v] * k for v, k in enumerate(sizes)])
    n = vids.size
    return SurvivalDataset(vids, np.arange(n, dtype=float)[:, None], np.arange(1, n + 1, dtype=float), np.ones(n))


def test_time_split_examples():
    data = _fleet([3, 1, 2])
    train, test, singles = trainer.time_split(data)
    assert train.record_ids.tolist() == [0, 1, 3, 4]
    assert test.record_ids.tolist() == [2, 5]
    assert singles == 1


def test_time_split_interleaved_vehicles():
    data = SurvivalDataset(np.array(["a", "b", "a", "b", "a"]), np.zeros((5, 1)), np.ones(5), np.ones(5))
    train, test, _ = trainer.time_split(data)
    assert test.record_ids.tolist() == [3, 4]
    assert train.record_ids.tolist() == [0, 1, 2]


def test_time_split_counts_and_errors():
    _, test, _ = trainer.time_split(_fleet([2, 5, 3, 4]))
    assert len(test) == 4
    with pytest.raises(ValueError):
        trainer.time_split(SurvivalDataset(np.array([]), np.zeros((0, 1)), np.array([]), np.array([])))


def test_adam_quadratic_converges():
    params = {"x": np.array(1.0)}
    state = AdamState.zeros_like(params, ["x"])
    for _ in range(200):
        state, params, skipped = trainer.adam_step(state, params, {"x": 2 * params["x"]}, 0.1)
        assert not skipped
    assert abs(float(params["x"])) < 1e-3


def test_adam_zero_gradient_and_nonfinite():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState.zeros_like(params, ["w"])
    state, new, _ = trainer.adam_step(state, params, {"w": np.zeros(2)}, 0.1)
    assert np.array_equal(new["w"], params["w"])
    state2, new2, skipped = trainer.adam_step(state, params, {"w": np.array([np.nan, 1.0])}, 0.1)
    assert skipped and new2 is params and state2 is state


def test_gradient_clipping():
    clipped = trainer.clip_global_norm({"a": np.array([3.0]), "b": np.array([4.0])}, 1.0)
    assert np.sqrt(clipped["a"] ** 2 + clipped["b"] ** 2) == pytest.approx(1.0)
    same = trainer.clip_global_norm({"a": np.array([0.3])}, 1.0)
    assert same["a"][0] == 0.3


def test_plateau_examples():
    assert trainer.plateau_scheduler(list(range(30, 0, -1))) == 0.01
    # baseline plus 10 flat epochs
    assert trainer.plateau_scheduler([1.0] * 11) == pytest.approx(0.001)
    # baseline plus 25 flat epochs: cuts after epochs 10 and 20
    assert trainer.plateau_scheduler([1.0] * 26) == pytest.approx(1e-4)
    assert trainer.plateau_scheduler([1.0] * 25) == pytest.approx(1e-4)
    assert trainer.plateau_scheduler([1.0] * 20) == pytest.approx(1e-3)


def test_plateau_floor_and_monotone():
    sched = PlateauScheduler(0.01, 0.1, 1)
    lrs = [sched.step(1.0) for _ in range(50)]
    assert min(lrs) == trainer.LR_FLOOR
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_config_validation_and_roundtrip():
    for bad in ({"plateau_factor": 1.0}, {"lr0": 0.0}, {"restarts": 0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    cfg = TrainConfig(seed=3, restarts=2)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"bogus": 1})


@pytest.fixture(scope="module")
def tiny_fleet():
    gt = simulate_dataset(SimConfig(d_a=3, d_n=1, n_s=300, L_s=2, seed=4))
    train, test, _ = trainer.time_split(gt.dataset)
    return gt, train, test


def test_fit_zero_epochs_returns_init(tiny_fleet):
    gt, train, _ = tiny_fleet
    cfg = TrainConfig(max_epochs=0, restarts=1, seed=5)
    params, report = trainer.fit(train, gt.spec, cfg)
    init = init_params(gt.spec, np.random.default_rng(5), cfg.weight_scale, cfg.bias_scale)
    assert all(np.array_equal(params[k], init[k]) for k in init)
    w = trainer.ipcw_weights(train.z, train.delta)
    assert report.final_objective == objective(init, gt.spec, train.to_batch(w))[0]


def test_fit_deterministic_and_selects_lowest_nll(tiny_fleet):
    gt, train, _ = tiny_fleet
    cfg = TrainConfig(max_epochs=15, restarts=3, seed=1, batch_size=64)
    p1, r1 = trainer.fit(train, gt.spec, cfg)
    p2, r2 = trainer.fit(train, gt.spec, cfg)
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert r1.loss_trace == r2.loss_trace
    completed = [r.final_nll for r in r1.restarts if not r.aborted]
    assert r1.final_nll == min(completed)
    assert np.all(np.isfinite(r1.loss_trace))
    lrs = [e["lr"] for e in r1.lr_events]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


def test_fit_records_nll_saturation(tiny_fleet):
    gt, train, _ = tiny_fleet
    z = train.z.copy()
    z[0] = 1e60
    params, report = trainer.fit(train.with_durations(z), gt.spec, TrainConfig(max_epochs=3, restarts=1))
    assert np.all(np.isfinite(report.loss_trace))
    assert report.restarts[0].saturated_rows == 1
    assert any(i["kind"] == "nll_saturation" for i in report.incidents)


def test_fit_overflowing_row_goes_through_guard(tiny_fleet):
    gt, train, _ = tiny_fleet
    z = train.z.copy()
    z[0] = 1e300  # the squared-error term overflows
    with pytest.raises(TrainingFailure) as info:
        trainer.fit(train.with_durations(z), gt.spec, TrainConfig(max_epochs=3, restarts=2))
    for rep in info.value.reports:
        assert rep.aborted
        kinds = {i["kind"] for i in rep.incidents}
        assert {"nonfinite_initial_objective", "nonfinite_loss"} <= kinds


def test_fit_all_restarts_abort(tiny_fleet, monkeypatch):
    gt, train, _ = tiny_fleet

    def broken(params, spec, batch, weights, reduction="mean", training=True):
        return float("nan"), {k: np.full_like(v, np.nan) for k, v in params.items()}, {}, {}

    monkeypatch.setattr(trainer, "loss_and_grad", broken)
    with pytest.raises(TrainingFailure) as info:
        trainer.fit(train, gt.spec, TrainConfig(max_epochs=5, restarts=2))
    assert all(r.aborted for r in info.value.reports)
    assert sum(1 for r in info.value.reports for i in r.incidents if i["kind"] == "nonfinite_loss") == 6


def test_batch_norm_training_updates_running_stats(tiny_fleet):
    gt, train, _ = tiny_fleet
    from dataclasses import replace

    spec = replace(gt.spec, use_batch_norm=True)
    params, _ = trainer.fit(train, spec, TrainConfig(max_epochs=2, restarts=1))
    assert not np.all(params["layer1.bn_mean"] == 0)
