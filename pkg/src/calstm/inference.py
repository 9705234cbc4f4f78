"""Closed-loop joint rollout, displacement error, baselines and the
cross-validation evaluation protocol.

Rollout warms the LSTMs up on the observed segment, then feeds each agent's
predicted position (the head mean, or a seeded sample) back as the next
input, recomputing the pooled encodings from everyone's predictions at every
step. People that are not modeled in the window (partial tracks) take part
in the pooling only while ground truth exists for them, i.e. during the
observed segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PreparedScene, SceneWindow, prepare_scene
from .errors import ConfigurationError, UsageError
from .model import (
    HyperParams,
    Model,
    ModelVariant,
    sample_position,
    validate_scene_for_variant,
)
from .pooling import GridSpec
from .training import TrainConfig, train


@dataclass
class PredictionResult:
    agent_ids: list[int]
    positions: np.ndarray  # (A, t_pred, 2)
    gaussians: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)


def rollout(
    window: SceneWindow,
    scene_points,
    model,
    mode: str = "mean",
    seed: int | None = None,
    grid: GridSpec | None = None,
) -> PredictionResult:
    """Predict the window's t_pred frames jointly for all modeled agents.

    `model` needs `initial_state(n)` and `step(state, positions, extras,
    scene_points, grid)`; a real Model also gets its variant checked against
    the scene.
    """
    if mode not in ("mean", "sample"):
        raise ConfigurationError(f"mode must be 'mean' or 'sample', got {mode!r}")
    if mode == "sample" and seed is None:
        raise UsageError("sample mode needs a seed")
    scene_points = np.asarray(scene_points, dtype=np.float64).reshape(-1, 2)
    if isinstance(model, Model):
        validate_scene_for_variant(model.variant, model.hyper, len(scene_points))
    rng = np.random.default_rng(seed) if mode == "sample" else None

    a = window.n_agents
    state = model.initial_state(a)
    for t in range(window.t_obs - 1):
        state, _ = model.step(
            state, window.positions[:, t, :], window.extra_positions(t), scene_points, grid
        )

    current = window.positions[:, window.t_obs - 1, :]
    extras = window.extra_positions(window.t_obs - 1)
    predicted = np.zeros((a, window.t_pred, 2))
    gaussians = []
    for k in range(window.t_pred):
        state, g = model.step(state, current, extras, scene_points, grid)
        mu, sigma, rho = g.values()
        gaussians.append((mu.copy(), sigma.copy(), np.asarray(rho).copy()))
        if mode == "mean":
            current = mu.reshape(a, 2)
        else:
            current = sample_position(g, rng).reshape(a, 2)
        predicted[:, k, :] = current
        extras = np.zeros((0, 2))  # no ground truth for unmodeled people from here on
    return PredictionResult(list(window.agent_ids), predicted, gaussians)


def ade(predictions: np.ndarray, ground_truth: np.ndarray) -> float:
    """Mean Euclidean distance between predicted and true positions, over all
    agents and predicted steps."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(ground_truth, dtype=np.float64)
    if p.shape != t.shape:
        raise UsageError(f"prediction shape {p.shape} != ground truth shape {t.shape}")
    d = p - t
    return float(np.mean(np.hypot(d[..., 0], d[..., 1])))


class ConstantVelocityModel:
    """Stateless baseline: repeat the last observed velocity."""

    def predict(self, window: SceneWindow) -> PredictionResult:
        last = window.positions[:, window.t_obs - 1, :]
        velocity = last - window.positions[:, window.t_obs - 2, :]
        steps = np.arange(1, window.t_pred + 1).reshape(1, -1, 1)
        predicted = last[:, None, :] + steps * velocity[:, None, :]
        return PredictionResult(list(window.agent_ids), predicted)


def constant_velocity_baseline(window: SceneWindow) -> PredictionResult:
    return ConstantVelocityModel().predict(window)


@dataclass
class WindowEvaluation:
    scene_id: str
    window_index: int
    result: PredictionResult
    predicted_m: np.ndarray  # meters
    truth_m: np.ndarray      # meters

    @property
    def displacement_sum(self) -> float:
        d = self.predicted_m - self.truth_m
        return float(np.sum(np.hypot(d[..., 0], d[..., 1])))

    @property
    def n_terms(self) -> int:
        return int(np.prod(self.predicted_m.shape[:2]))


def evaluate_windows(
    model: Model,
    prepared: PreparedScene,
    mode: str = "mean",
    seed: int | None = None,
) -> list[WindowEvaluation]:
    """Roll out every window of a prepared scene; report errors in meters."""
    grid = model.hyper.grid.scaled(1.0 / prepared.transform.scale)
    out = []
    for i, window in enumerate(prepared.windows):
        result = rollout(window, prepared.scene.points, model, mode=mode, seed=seed, grid=grid)
        predicted_m = prepared.transform.invert(result.positions)
        truth_m = prepared.transform.invert(window.positions[:, window.t_obs :, :])
        out.append(WindowEvaluation(prepared.scene_id, i, result, predicted_m, truth_m))
    return out


def pooled_ade(evaluations: list[WindowEvaluation]) -> float:
    total = sum(e.displacement_sum for e in evaluations)
    count = sum(e.n_terms for e in evaluations)
    if count == 0:
        raise UsageError("no windows to evaluate")
    return total / count


@dataclass
class SceneSource:
    """Raw (meter-space) data for one scene."""

    scene_id: str
    dataset: object
    scene: object


@dataclass
class FoldResult:
    fold_index: int
    test_scenes: list[str]
    ade_m: float
    n_windows: int
    params: dict = field(repr=False, default_factory=dict)
    loss_history: list[float] = field(repr=False, default_factory=list)


@dataclass
class EvalProtocol:
    """Windowing and rollout settings shared by training and evaluation."""

    t_obs: int = 8
    t_pred: int = 12
    subsample_stride: int = 1
    train_window_stride: int = 1
    eval_window_stride: int | None = None  # defaults to non-overlapping
    mode: str = "mean"
    sample_seed: int | None = None

    @property
    def eval_stride(self) -> int:
        return self.eval_window_stride or (self.t_obs + self.t_pred)


def crossval(
    sources: list[SceneSource],
    folds: list[dict],
    variant: ModelVariant,
    hyper: HyperParams,
    config: TrainConfig,
    protocol: EvalProtocol | None = None,
) -> list[FoldResult]:
    """Train on each fold's train scenes, report test-scene ADE in meters."""
    protocol = protocol or EvalProtocol()
    by_id = {s.scene_id: s for s in sources}
    results = []
    for index, fold in enumerate(folds):
        missing = [sid for sid in fold["train"] + fold["test"] if sid not in by_id]
        if missing:
            raise ConfigurationError(f"fold {index}: unknown scenes {missing}")
        train_prepared = [
            prepare_scene(
                by_id[sid].dataset, by_id[sid].scene,
                t_obs=protocol.t_obs, t_pred=protocol.t_pred,
                window_stride=protocol.train_window_stride,
                subsample_stride=protocol.subsample_stride,
            )
            for sid in fold["train"]
        ]
        outcome = train(train_prepared, variant, hyper, config)
        model = Model(variant, hyper, outcome.params)
        evaluations = []
        for sid in fold["test"]:
            prepared = prepare_scene(
                by_id[sid].dataset, by_id[sid].scene,
                t_obs=protocol.t_obs, t_pred=protocol.t_pred,
                window_stride=protocol.eval_stride,
                subsample_stride=protocol.subsample_stride,
            )
            evaluations.extend(
                evaluate_windows(model, prepared, mode=protocol.mode, seed=protocol.sample_seed)
            )
        results.append(
            FoldResult(
                index,
                list(fold["test"]),
                pooled_ade(evaluations),
                len(evaluations),
                outcome.params,
                outcome.loss_history,
            )
        )
    return results


def write_results_csv(path, rows: list[dict]) -> None:
    """Per-step predictions: scene,fold,variant,window,agent,step,pred,true."""
    header = "scene,fold,variant,window,agent,step,pred_x,pred_y,true_x,true_y"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for r in rows:
            fh.write(
                f"{r['scene']},{r['fold']},{r['variant']},{r['window']},{r['agent']},"
                f"{r['step']},{r['pred_x']!r},{r['pred_y']!r},{r['true_x']!r},{r['true_y']!r}\n"
            )


def evaluation_rows(fold_index: int, variant_name: str, evaluations: list[WindowEvaluation]) -> list[dict]:
    rows = []
    for e in evaluations:
        for ai, agent in enumerate(e.result.agent_ids):
            for step in range(e.predicted_m.shape[1]):
                rows.append(
                    {
                        "scene": e.scene_id,
                        "fold": fold_index,
                        "variant": variant_name,
                        "window": e.window_index,
                        "agent": agent,
                        "step": step + 1,
                        "pred_x": float(e.predicted_m[ai, step, 0]),
                        "pred_y": float(e.predicted_m[ai, step, 1]),
                        "true_x": float(e.truth_m[ai, step, 0]),
                        "true_y": float(e.truth_m[ai, step, 1]),
                    }
                )
    return rows


def write_summary_csv(path, table: dict[str, list[FoldResult]]) -> None:
    """Variant-by-sequence ADE table: one row per technique, fold columns plus avg."""
    variants = list(table)
    if not variants:
        raise UsageError("nothing to summarize")
    first = table[variants[0]]
    labels = ["+".join(fr.test_scenes) for fr in first]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("technique," + ",".join(labels) + ",avg\n")
        for name in variants:
            ades = [fr.ade_m for fr in table[name]]
            avg = float(np.mean(ades))
            fh.write(name + "," + ",".join(f"{v:.6f}" for v in ades) + f",{avg:.6f}\n")
