"""Finite-difference verification of the full training gradient.

The tiny suite runs the sequence loss of every model variant on a small
random window (2 agents, 2 static points, 6 frames, hidden size 8) and
compares reverse-mode gradients of every parameter matrix against central
differences.
"""

from __future__ import annotations

import numpy as np

from .autodiff import GradCheckReport, finite_diff_check
from .data import SceneWindow
from .model import HyperParams, ModelVariant, init_params, sequence_loss
from .pooling import GridSpec

TINY_HYPER = HyperParams(embed_dim=4, hidden_dim=8, grid=GridSpec(8.0, 4), static_points=2)
# step sized for ~O(1) losses whose flattest coordinates carry ~1e-8 gradients
SEQUENCE_FD_STEP = 2e-4


def tiny_window(seed: int = 0, n_agents: int = 2, length: int = 6) -> tuple[SceneWindow, np.ndarray]:
    rng = np.random.default_rng(seed)
    positions = rng.normal(size=(n_agents, length, 2))
    points = rng.normal(size=(TINY_HYPER.static_points, 2))
    window = SceneWindow(length // 2, length - length // 2, list(range(n_agents)), positions)
    return window, points


def check_variant(
    variant: ModelVariant,
    seed: int = 0,
    step: float = SEQUENCE_FD_STEP,
    hyper: HyperParams = TINY_HYPER,
) -> GradCheckReport:
    window, points = tiny_window(seed)
    params = init_params(variant, hyper, seed)

    def f(leaves):
        return sequence_loss(window, points, leaves, variant, hyper)

    return finite_diff_check(f, params, step=step)


def tiny_suite(seed: int = 0, step: float = SEQUENCE_FD_STEP) -> dict[str, GradCheckReport]:
    """FD-check sequence_loss for all nine variants; keys are variant names."""
    return {
        variant.name: check_variant(variant, seed=seed, step=step)
        for variant in ModelVariant.all()
    }
