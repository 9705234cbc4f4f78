import numpy as np
import pytest

from calstm import data, inference
from calstm.data import SceneWindow
from calstm.errors import ConfigurationError, UsageError
from calstm.inference import (
    EvalProtocol,
    SceneSource,
    ade,
    constant_velocity_baseline,
    crossval,
    pooled_ade,
    rollout,
)
from calstm.model import GaussianParams, HyperParams, Model, ModelVariant
from calstm.pooling import GridSpec
from calstm.training import TrainConfig

TINY_HYPER = HyperParams(embed_dim=4, hidden_dim=8, grid=GridSpec(8.0, 4), static_points=0)


class StepRightStub:
    """Head always says: next position is one meter to the right."""

    def initial_state(self, n):
        return n

    def step(self, state, positions, extras, scene_points, grid):
        mu = np.asarray(positions, dtype=np.float64) + np.array([1.0, 0.0])
        a = mu.shape[0]
        g = GaussianParams.from_values(mu, np.full((a, 2), 1e-12), np.zeros(a))
        return state, g


def _window(positions, t_obs=3, t_pred=4):
    positions = np.asarray(positions, dtype=np.float64)
    return SceneWindow(t_obs, t_pred, list(range(positions.shape[0])), positions)


def test_rollout_constant_step_stub():
    positions = np.zeros((1, 7, 2))  # observed tail sits at the origin
    window = _window(positions)
    result = rollout(window, np.zeros((0, 2)), StepRightStub(), mode="mean")
    expect = np.array([[(k, 0.0) for k in range(1, 5)]])
    assert np.allclose(result.positions, expect, atol=0)
    assert len(result.gaussians) == 4


def test_rollout_sample_mode_deterministic():
    positions = np.zeros((2, 7, 2))
    window = _window(positions)
    a = rollout(window, np.zeros((0, 2)), StepRightStub(), mode="sample", seed=11)
    b = rollout(window, np.zeros((0, 2)), StepRightStub(), mode="sample", seed=11)
    assert np.array_equal(a.positions, b.positions)
    c = rollout(window, np.zeros((0, 2)), StepRightStub(), mode="sample", seed=12)
    assert not np.array_equal(a.positions, c.positions)


def test_rollout_sample_requires_seed():
    window = _window(np.zeros((1, 7, 2)))
    with pytest.raises(UsageError):
        rollout(window, np.zeros((0, 2)), StepRightStub(), mode="sample")


def test_rollout_rejects_unknown_mode():
    window = _window(np.zeros((1, 7, 2)))
    with pytest.raises(ConfigurationError):
        rollout(window, np.zeros((0, 2)), StepRightStub(), mode="map")


def test_rollout_scene_mismatch():
    model = Model.init(ModelVariant("none", "distance"),
                       HyperParams(embed_dim=4, hidden_dim=8, grid=GridSpec(8.0, 4), static_points=2),
                       seed=0)
    window = _window(np.zeros((1, 7, 2)))
    with pytest.raises(ConfigurationError):
        rollout(window, np.zeros((0, 2)), model)


def test_rollout_vanilla_independent_of_other_agent():
    model = Model.init(ModelVariant("none", "none"), TINY_HYPER, seed=3)
    rng = np.random.default_rng(4)
    base = rng.normal(size=(2, 7, 2)) * 0.2
    perturbed = base.copy()
    perturbed[1] += 7.5
    r1 = rollout(_window(base), np.zeros((0, 2)), model)
    r2 = rollout(_window(perturbed), np.zeros((0, 2)), model)
    assert np.array_equal(r1.positions[0], r2.positions[0])
    assert not np.array_equal(r1.positions[1], r2.positions[1])


def test_rollout_occupancy_depends_on_other_agent():
    hyper = HyperParams(embed_dim=4, hidden_dim=8, grid=GridSpec(8.0, 4), static_points=0)
    model = Model.init(ModelVariant("occupancy", "none"), hyper, seed=3)
    rng = np.random.default_rng(4)
    base = rng.normal(size=(2, 7, 2)) * 0.2
    perturbed = base.copy()
    perturbed[1] += 0.5  # stays within pooling range
    r1 = rollout(_window(base), np.zeros((0, 2)), model)
    r2 = rollout(_window(perturbed), np.zeros((0, 2)), model)
    assert not np.array_equal(r1.positions[0], r2.positions[0])


def test_ade_identical_zero():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(3, 12, 2))
    assert ade(p, p) == 0.0


def test_ade_constant_offset_345():
    rng = np.random.default_rng(1)
    t = rng.normal(size=(2, 5, 2))
    p = t + np.array([3.0, 4.0])
    assert ade(p, t) == pytest.approx(5.0, abs=1e-12)


def test_ade_mean_over_agents_and_steps():
    t = np.zeros((2, 3, 2))
    p = np.zeros((2, 3, 2))
    p[0, :, 0] = 1.0  # agent 0 off by 1 at every step
    p[1, :, 0] = 3.0  # agent 1 off by 3
    assert ade(p, t) == pytest.approx(2.0, abs=0)


def test_ade_translation_invariant():
    rng = np.random.default_rng(2)
    t = rng.normal(size=(3, 8, 2))
    p = rng.normal(size=(3, 8, 2))
    v = np.array([123.0, -456.0])
    assert ade(p + v, t + v) == pytest.approx(ade(p, t), abs=1e-12)


def test_ade_shape_mismatch():
    with pytest.raises(UsageError):
        ade(np.zeros((1, 3, 2)), np.zeros((1, 4, 2)))


def test_constant_velocity_extrapolates():
    positions = np.zeros((1, 7, 2))
    positions[0, :, 0] = np.arange(7.0)  # moving +1 in x per step
    window = _window(positions, t_obs=2, t_pred=5)
    result = constant_velocity_baseline(window)
    assert np.allclose(result.positions[0, :, 0], [2.0, 3.0, 4.0, 5.0, 6.0], atol=0)
    assert np.all(result.positions[0, :, 1] == 0.0)


def test_constant_velocity_stationary():
    window = _window(np.full((1, 7, 2), 2.5))
    result = constant_velocity_baseline(window)
    assert np.all(result.positions == 2.5)


def test_constant_velocity_exact_on_linear_motion():
    rng = np.random.default_rng(5)
    start = rng.normal(size=(3, 1, 2))
    vel = rng.normal(size=(3, 1, 2))
    steps = np.arange(7).reshape(1, -1, 1)
    positions = start + vel * steps
    window = _window(positions, t_obs=3, t_pred=4)
    result = constant_velocity_baseline(window)
    truth = positions[:, 3:, :]
    assert ade(result.positions, truth) < 1e-12


def test_ade_scales_with_normalization():
    rng = np.random.default_rng(6)
    p = rng.normal(size=(2, 4, 2))
    t = rng.normal(size=(2, 4, 2))
    transform = data.NormTransform((1.5, -2.0), 7.0)
    ade_norm = ade(p, t)
    ade_m = ade(transform.invert(p), transform.invert(t))
    assert ade_m == pytest.approx(transform.scale * ade_norm, rel=1e-12)


def _line_source(scene_id, seed, n_agents=2, steps=26):
    rng = np.random.default_rng(seed)
    records = []
    for a in range(n_agents):
        start = rng.uniform(-4, 4, size=2)
        vel = rng.uniform(-0.3, 0.3, size=2)
        for f in range(steps):
            p = start + f * vel
            records.append((f, a, float(p[0]), float(p[1])))
    ds = data.TrajectoryDataset.from_records(scene_id, records)
    return SceneSource(scene_id, ds, data.Scene.empty(scene_id))


def test_evaluate_windows_and_pooled_ade():
    source = _line_source("s", 7)
    prepared = data.prepare_scene(source.dataset, source.scene, t_obs=3, t_pred=3, window_stride=6)
    model = Model.init(ModelVariant("none", "none"), TINY_HYPER, seed=0)
    evals = inference.evaluate_windows(model, prepared)
    assert evals
    value = pooled_ade(evals)
    assert np.isfinite(value) and value >= 0.0


def test_crossval_two_folds_runs():
    sources = [_line_source("a", 1), _line_source("b", 2)]
    folds = data.make_folds(["a", "b"], 2)
    protocol = EvalProtocol(t_obs=3, t_pred=3, train_window_stride=5)
    config = TrainConfig(epochs=2, seed=0)
    results = crossval(sources, folds, ModelVariant("none", "none"), TINY_HYPER, config, protocol)
    assert [fr.test_scenes for fr in results] == [["a"], ["b"]]
    for fr in results:
        assert np.isfinite(fr.ade_m)
        assert fr.n_windows > 0


def test_summary_csv_layout(tmp_path):
    from calstm.inference import FoldResult, write_summary_csv

    table = {
        "lstm": [FoldResult(0, ["a"], 1.25, 1), FoldResult(1, ["b"], 0.75, 1)],
        "ca-lstm": [FoldResult(0, ["a"], 1.0, 1), FoldResult(1, ["b"], 0.5, 1)],
    }
    path = tmp_path / "summary.csv"
    write_summary_csv(path, table)
    lines = path.read_text().splitlines()
    assert lines[0] == "technique,a,b,avg"
    assert lines[1].startswith("lstm,1.25")
    assert lines[1].endswith("1.000000")
    assert lines[2].startswith("ca-lstm,")
    assert lines[2].endswith("0.750000")


def test_results_csv(tmp_path):
    source = _line_source("s", 8)
    prepared = data.prepare_scene(source.dataset, source.scene, t_obs=3, t_pred=3, window_stride=6)
    model = Model.init(ModelVariant("none", "none"), TINY_HYPER, seed=0)
    evals = inference.evaluate_windows(model, prepared)
    rows = inference.evaluation_rows(0, "lstm", evals)
    path = tmp_path / "rows.csv"
    inference.write_results_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "scene,fold,variant,window,agent,step,pred_x,pred_y,true_x,true_y"
    assert len(lines) == 1 + len(rows)
    assert rows[0]["step"] == 1
