"""RMSProp training loop over scene windows, with clipping and seeded shuffling.

The optimization unit is a window: pooling couples the agents inside one, so
gradients are accumulated per window and applied immediately. Loss history
records the mean per-window NLL of each epoch, measured before that epoch's
updates touched the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import PreparedScene, SceneWindow
from .errors import ConfigurationError, TrainingDiverged
from .model import (
    HyperParams,
    ModelVariant,
    init_params,
    params_on_tape,
    save_checkpoint,
    sequence_loss,
    validate_scene_for_variant,
)
from .pooling import GridSpec


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    rmsprop_decay: float = 0.95
    epochs: int = 1600
    clip_norm: float = 10.0
    seed: int = 0
    epsilon: float = 1e-8
    full_range_loss: bool = False  # score observation transitions too

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ConfigurationError(f"rmsprop_decay must be in (0, 1), got {self.rmsprop_decay}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be > 0, got {self.clip_norm}")


def rmsprop_update(
    param: np.ndarray, grad: np.ndarray, v: np.ndarray, config: TrainConfig
) -> tuple[np.ndarray, np.ndarray]:
    """One step of v <- rho v + (1-rho) g^2; p <- p - lr g / (sqrt(v) + eps)."""
    if param.shape != grad.shape or param.shape != v.shape:
        raise ConfigurationError(
            f"rmsprop shapes disagree: param {param.shape}, grad {grad.shape}, v {v.shape}"
        )
    rho = config.rmsprop_decay
    v2 = rho * v + (1.0 - rho) * grad * grad
    p2 = param - config.learning_rate * grad / (np.sqrt(v2) + config.epsilon)
    return p2, v2


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients together so their global L2 norm is at most clip_norm."""
    if clip_norm <= 0:
        raise ConfigurationError(f"clip_norm must be > 0, got {clip_norm}")
    norm = global_norm(grads)
    if norm <= clip_norm:
        return grads
    factor = clip_norm / norm
    return {k: g * factor for k, g in grads.items()}


@dataclass
class WindowTask:
    """One training window with the scene context it was cut from."""

    window: SceneWindow
    scene_points: np.ndarray
    grid: GridSpec
    scene_id: str = ""


def tasks_from_prepared(prepared: list[PreparedScene], hyper: HyperParams) -> list[WindowTask]:
    """Flatten prepared scenes into window tasks, rescaling the pooling grid
    into each scene's normalized coordinates."""
    tasks = []
    for ps in prepared:
        grid = hyper.grid.scaled(1.0 / ps.transform.scale)
        for w in ps.windows:
            tasks.append(WindowTask(w, ps.scene.points, grid, ps.scene_id))
    return tasks


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    loss_history: list[float]
    variant: ModelVariant
    hyper: HyperParams
    config: TrainConfig
    initial_params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def train(
    prepared: list[PreparedScene],
    variant: ModelVariant,
    hyper: HyperParams,
    config: TrainConfig,
    *,
    initial_params: dict[str, np.ndarray] | None = None,
    checkpoint_path=None,
    checkpoint_every: int | None = None,
    log_every: int | None = None,
) -> TrainResult:
    """Fit one model on all windows of the prepared scenes.

    Deterministic given (seed, data, config): the seed fixes both the weight
    init and the epoch shuffling. Raises TrainingDiverged naming the epoch and
    window as soon as a loss stops being finite.
    """
    tasks = tasks_from_prepared(prepared, hyper)
    if not tasks:
        raise ConfigurationError("no training windows: scenes are too short or empty")
    for ps in prepared:
        validate_scene_for_variant(variant, hyper, ps.scene.k)

    params = (
        {k: np.array(v, dtype=np.float64) for k, v in initial_params.items()}
        if initial_params is not None
        else init_params(variant, hyper, config.seed)
    )
    initial = {k: v.copy() for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    shuffle_rng = np.random.default_rng(config.seed + 1)

    history: list[float] = []
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(tasks))
        epoch_losses = []
        for idx in order:
            task = tasks[int(idx)]
            tape = ad.Tape()
            pt = params_on_tape(params, tape)
            loss = sequence_loss(
                task.window,
                task.scene_points,
                pt,
                variant,
                hyper,
                grid=task.grid,
                full_range=config.full_range_loss,
            )
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"loss became {value} at epoch {epoch + 1}, "
                    f"window {int(idx)} (scene {task.scene_id or '?'})"
                )
            tape.backward(loss)
            grads = {
                k: (pt[k].grad if pt[k].grad is not None else np.zeros_like(params[k]))
                for k in params
            }
            grads = clip_gradients(grads, config.clip_norm)
            for k in params:
                params[k], v_state[k] = rmsprop_update(params[k], grads[k], v_state[k], config)
            epoch_losses.append(value)
        history.append(float(np.mean(epoch_losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{config.epochs}: mean nll {history[-1]:.4f}")
        if checkpoint_path and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            interim = Path(checkpoint_path)
            interim = interim.with_name(f"{interim.stem}.epoch{epoch + 1}{interim.suffix}")
            save_checkpoint(interim, variant, hyper, params, config.seed)

    if checkpoint_path:
        save_checkpoint(checkpoint_path, variant, hyper, params, config.seed)
    return TrainResult(params, history, variant, hyper, config, initial)


def save_loss_history(history: list[float], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_nll\n")
        for epoch, value in enumerate(history, start=1):
            fh.write(f"{epoch},{value!r}\n")
