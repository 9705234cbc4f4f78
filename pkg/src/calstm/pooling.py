"""Interaction encodings built from agent positions, hidden states and scene points.

Four encodings feed the model input: an occupancy grid counting nearby
agents, a social tensor summing nearby agents' previous hidden states per
grid cell, the same occupancy-style grid over static scene points, and a
vector of distances to every static point. Offsets follow the
self-minus-other convention; grid cells are half-open, so an offset on the
upper boundary falls outside the grid.

Per-agent functions mirror that definition one agent at a time. The
``*_grids``/``social_assignment`` helpers compute the same quantities for
a whole frame at once and are what the model uses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, UsageError


@dataclass(frozen=True)
class GridSpec:
    """Square pooling neighborhood, in the coordinate units of the data."""

    neighborhood_side: float = 32.0
    cells_per_side: int = 8

    def __post_init__(self):
        if self.neighborhood_side <= 0:
            raise ConfigurationError(f"neighborhood_side must be > 0, got {self.neighborhood_side}")
        if self.cells_per_side <= 0:
            raise ConfigurationError(f"cells_per_side must be > 0, got {self.cells_per_side}")

    @property
    def cell_size(self) -> float:
        return self.neighborhood_side / self.cells_per_side

    @property
    def n_cells(self) -> int:
        return self.cells_per_side * self.cells_per_side

    def scaled(self, factor: float) -> "GridSpec":
        """The same grid in coordinates multiplied by `factor`."""
        return replace(self, neighborhood_side=self.neighborhood_side * factor)


def cell_index(self_pos, other_pos, spec: GridSpec) -> tuple[int, int] | None:
    """Grid cell of `other` relative to `self`, or None outside the neighborhood."""
    ox = self_pos[0] - other_pos[0]
    oy = self_pos[1] - other_pos[1]
    half = spec.neighborhood_side / 2.0
    m = int(np.floor((ox + half) / spec.cell_size))
    n = int(np.floor((oy + half) / spec.cell_size))
    if 0 <= m < spec.cells_per_side and 0 <= n < spec.cells_per_side:
        return (m, n)
    return None


def occupancy_grid(agent_id, frame: dict, spec: GridSpec) -> np.ndarray:
    """Count every other agent of `frame` per cell around `agent_id`."""
    if agent_id not in frame:
        raise UsageError(f"agent {agent_id!r} is not present in the frame")
    self_pos = frame[agent_id]
    grid = np.zeros((spec.cells_per_side, spec.cells_per_side))
    for other_id, pos in frame.items():
        if other_id == agent_id:
            continue
        idx = cell_index(self_pos, pos, spec)
        if idx is not None:
            grid[idx] += 1.0
    return grid


def social_tensor(agent_id, frame: dict, hidden: dict, spec: GridSpec) -> np.ndarray:
    """Per-cell sum of the other agents' previous hidden states."""
    if agent_id not in frame:
        raise UsageError(f"agent {agent_id!r} is not present in the frame")
    missing = [a for a in frame if a not in hidden]
    if missing:
        raise UsageError(f"agents without a hidden state: {missing}")
    dims = {np.asarray(hidden[a]).shape for a in frame}
    if len(dims) != 1:
        raise UsageError(f"hidden states disagree in dimension: {sorted(dims)}")
    (dim,) = dims.pop()
    self_pos = frame[agent_id]
    tensor = np.zeros((spec.cells_per_side, spec.cells_per_side, dim))
    for other_id, pos in frame.items():
        if other_id == agent_id:
            continue
        idx = cell_index(self_pos, pos, spec)
        if idx is not None:
            tensor[idx] += np.asarray(hidden[other_id], dtype=np.float64)
    return tensor


def static_grid(position, points, spec: GridSpec) -> np.ndarray:
    """Occupancy-style grid over static points instead of agents."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    grid = np.zeros((spec.cells_per_side, spec.cells_per_side))
    for point in points:
        idx = cell_index(position, point, spec)
        if idx is not None:
            grid[idx] += 1.0
    return grid


def context_distances(position, points) -> np.ndarray:
    """Euclidean distance from `position` to each static point, in point order."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    d = points - np.asarray(position, dtype=np.float64)
    return np.hypot(d[:, 0], d[:, 1])


def _cells(self_positions: np.ndarray, other_positions: np.ndarray, spec: GridSpec):
    """Flat cell index of every (self, other) pair; -1 when out of range."""
    offsets = self_positions[:, None, :] - other_positions[None, :, :]
    half = spec.neighborhood_side / 2.0
    mn = np.floor((offsets + half) / spec.cell_size).astype(np.int64)
    valid = np.all((mn >= 0) & (mn < spec.cells_per_side), axis=-1)
    flat = mn[..., 0] * spec.cells_per_side + mn[..., 1]
    return np.where(valid, flat, -1)


def occupancy_grids(positions: np.ndarray, spec: GridSpec, extras: np.ndarray | None = None) -> np.ndarray:
    """Row-major flattened occupancy grid per agent, shape (A, cells^2).

    `positions` holds the modeled agents; `extras` holds positions of other
    people present in the frame, counted as neighbors of everyone.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    a = positions.shape[0]
    out = np.zeros((a, spec.n_cells))
    cells = _cells(positions, positions, spec)
    np.fill_diagonal(cells, -1)  # self excluded
    rows, cols = np.nonzero(cells >= 0)
    np.add.at(out, (rows, cells[rows, cols]), 1.0)
    if extras is not None and len(extras):
        ecells = _cells(positions, np.asarray(extras, dtype=np.float64).reshape(-1, 2), spec)
        rows, cols = np.nonzero(ecells >= 0)
        np.add.at(out, (rows, ecells[rows, cols]), 1.0)
    return out


def static_grids(positions: np.ndarray, points: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Flattened static-point grid per agent, shape (A, cells^2)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    out = np.zeros((positions.shape[0], spec.n_cells))
    if len(points):
        cells = _cells(positions, points, spec)
        rows, cols = np.nonzero(cells >= 0)
        np.add.at(out, (rows, cells[rows, cols]), 1.0)
    return out


def context_distance_matrix(positions: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Distances of every agent to every static point, shape (A, K)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    d = positions[:, None, :] - points[None, :, :]
    return np.hypot(d[..., 0], d[..., 1])


def social_assignment(positions: np.ndarray, spec: GridSpec) -> np.ndarray:
    """0/1 matrix M of shape (A*cells^2, A) so that M @ H stacks, per agent,
    the per-cell sums of the other agents' hidden-state rows of H."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    a = positions.shape[0]
    cells = _cells(positions, positions, spec)
    np.fill_diagonal(cells, -1)
    m = np.zeros((a * spec.n_cells, a))
    rows, cols = np.nonzero(cells >= 0)
    m[rows * spec.n_cells + cells[rows, cols], cols] = 1.0
    return m
