import math

import numpy as np
import pytest

from calstm import pooling
from calstm.errors import ConfigurationError, UsageError
from calstm.pooling import GridSpec

SPEC = GridSpec()  # side 32, 8x8 cells


# naive double-loop reference, kept independent of the package internals
def ref_cell(self_pos, other_pos, side, cells):
    ox = self_pos[0] - other_pos[0]
    oy = self_pos[1] - other_pos[1]
    cell = side / cells
    m = math.floor((ox + side / 2.0) / cell)
    n = math.floor((oy + side / 2.0) / cell)
    if 0 <= m < cells and 0 <= n < cells:
        return m, n
    return None


def ref_occupancy(agent, frame, side, cells):
    grid = [[0.0] * cells for _ in range(cells)]
    for other, pos in frame.items():
        if other == agent:
            continue
        idx = ref_cell(frame[agent], pos, side, cells)
        if idx is not None:
            grid[idx[0]][idx[1]] += 1.0
    return np.array(grid)


def ref_social(agent, frame, hidden, side, cells, dim):
    tensor = np.zeros((cells, cells, dim))
    for other, pos in frame.items():
        if other == agent:
            continue
        idx = ref_cell(frame[agent], pos, side, cells)
        if idx is not None:
            tensor[idx[0], idx[1]] += hidden[other]
    return tensor


def ref_static(position, points, side, cells):
    grid = [[0.0] * cells for _ in range(cells)]
    for p in points:
        idx = ref_cell(position, p, side, cells)
        if idx is not None:
            grid[idx[0]][idx[1]] += 1.0
    return np.array(grid)


def ref_distances(position, points):
    return np.array(
        [math.sqrt((position[0] - p[0]) ** 2 + (position[1] - p[1]) ** 2) for p in points]
    )


def test_cell_index_zero_offset_center():
    assert pooling.cell_index((0.0, 0.0), (0.0, 0.0), SPEC) == (4, 4)


def test_cell_index_unit_offset():
    assert pooling.cell_index((0.0, 0.0), (1.0, 1.0), SPEC) == (3, 3)


def test_cell_index_outside_neighborhood():
    assert pooling.cell_index((0.0, 0.0), (20.0, 0.0), SPEC) is None


def test_cell_index_upper_boundary_excluded():
    # an offset exactly on the +side/2 edge falls outside (half-open cells)
    assert pooling.cell_index((0.0, 0.0), (-16.0, 0.0), SPEC) is None
    assert pooling.cell_index((0.0, 0.0), (16.0, 0.0), SPEC) is not None


def test_occupancy_self_excluded():
    grid = pooling.occupancy_grid(1, {1: (0.0, 0.0)}, SPEC)
    assert grid.shape == (8, 8)
    assert np.all(grid == 0.0)


def test_occupancy_single_neighbor():
    grid = pooling.occupancy_grid(1, {1: (0.0, 0.0), 2: (1.0, 1.0)}, SPEC)
    assert grid[3, 3] == 1.0
    assert grid.sum() == 1.0


def test_occupancy_additive_counting():
    grid = pooling.occupancy_grid(1, {1: (0.0, 0.0), 2: (1.0, 1.0), 3: (1.0, 1.0)}, SPEC)
    assert grid[3, 3] == 2.0
    assert grid.sum() == 2.0


def test_occupancy_agent_absent():
    with pytest.raises(UsageError):
        pooling.occupancy_grid(9, {1: (0.0, 0.0)}, SPEC)


def test_social_no_neighbors():
    tensor = pooling.social_tensor(1, {1: (0.0, 0.0)}, {1: np.zeros(4)}, SPEC)
    assert tensor.shape == (8, 8, 4)
    assert np.all(tensor == 0.0)


def test_social_single_neighbor_basis_vector():
    e1 = np.array([1.0, 0.0, 0.0])
    tensor = pooling.social_tensor(
        1, {1: (0.0, 0.0), 2: (1.0, 1.0)}, {1: np.zeros(3), 2: e1}, SPEC
    )
    assert np.array_equal(tensor[3, 3], e1)
    assert tensor.sum() == 1.0


def test_social_same_cell_additivity():
    ha = np.array([1.0, 2.0])
    hb = np.array([-3.0, 5.0])
    tensor = pooling.social_tensor(
        1,
        {1: (0.0, 0.0), 2: (1.0, 1.0), 3: (1.2, 0.9)},
        {1: np.zeros(2), 2: ha, 3: hb},
        SPEC,
    )
    assert np.array_equal(tensor[3, 3], ha + hb)


def test_social_missing_hidden_state():
    with pytest.raises(UsageError):
        pooling.social_tensor(1, {1: (0.0, 0.0), 2: (1.0, 1.0)}, {1: np.zeros(2)}, SPEC)


def test_static_grid_no_points():
    grid = pooling.static_grid((0.0, 0.0), np.zeros((0, 2)), SPEC)
    assert np.all(grid == 0.0)


def test_static_grid_single_point():
    grid = pooling.static_grid((0.0, 0.0), [(1.0, 1.0)], SPEC)
    assert grid[3, 3] == 1.0
    assert grid.sum() == 1.0


def test_static_grid_far_point():
    grid = pooling.static_grid((0.0, 0.0), [(100.0, 0.0)], SPEC)
    assert np.all(grid == 0.0)


def test_context_distances_345():
    assert pooling.context_distances((0.0, 0.0), [(3.0, 4.0)])[0] == pytest.approx(5.0, abs=0)


def test_context_distances_coincident():
    assert pooling.context_distances((1.0, 1.0), [(1.0, 1.0)])[0] == 0.0


def test_context_distances_scene_order():
    out = pooling.context_distances((0.0, 0.0), [(3.0, 4.0), (0.0, 2.0)])
    assert np.allclose(out, [5.0, 2.0], atol=0)


def test_grid_spec_validation():
    with pytest.raises(ConfigurationError):
        GridSpec(neighborhood_side=0.0)
    with pytest.raises(ConfigurationError):
        GridSpec(cells_per_side=0)
    assert GridSpec(32.0, 8).cell_size == 4.0
    assert GridSpec(32.0, 8).scaled(0.5).neighborhood_side == 16.0


def _random_frame(rng, max_agents=10):
    n = int(rng.integers(1, max_agents + 1))
    ids = list(rng.permutation(100)[:n])
    return {int(a): tuple(rng.uniform(-25, 25, size=2)) for a in ids}


def test_oracle_equivalence_100_random_frames():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        frame = _random_frame(rng)
        points = rng.uniform(-25, 25, size=(int(rng.integers(0, 7)), 2))
        dim = int(rng.integers(1, 5))
        hidden = {a: rng.normal(size=dim) for a in frame}
        agent = list(frame)[int(rng.integers(len(frame)))]

        assert np.array_equal(
            pooling.occupancy_grid(agent, frame, SPEC),
            ref_occupancy(agent, frame, 32.0, 8),
        )
        assert np.array_equal(
            pooling.social_tensor(agent, frame, hidden, SPEC),
            ref_social(agent, frame, hidden, 32.0, 8, dim),
        )
        pos = frame[agent]
        assert np.array_equal(
            pooling.static_grid(pos, points, SPEC), ref_static(pos, points, 32.0, 8)
        )
        if len(points):
            got = pooling.context_distances(pos, points)
            assert np.max(np.abs(got - ref_distances(pos, points))) < 1e-12


def test_batched_helpers_match_per_agent_ops():
    rng = np.random.default_rng(9)
    for _ in range(30):
        n = int(rng.integers(1, 8))
        e = int(rng.integers(0, 4))
        positions = rng.uniform(-20, 20, size=(n, 2))
        extras = rng.uniform(-20, 20, size=(e, 2))
        points = rng.uniform(-20, 20, size=(int(rng.integers(0, 5)), 2))

        grids = pooling.occupancy_grids(positions, SPEC, extras=extras)
        for i in range(n):
            frame = {j: tuple(positions[j]) for j in range(n)}
            frame.update({100 + k: tuple(extras[k]) for k in range(e)})
            assert np.array_equal(grids[i], pooling.occupancy_grid(i, frame, SPEC).reshape(-1))

        sgrids = pooling.static_grids(positions, points, SPEC)
        for i in range(n):
            assert np.array_equal(sgrids[i], pooling.static_grid(positions[i], points, SPEC).reshape(-1))

        if len(points):
            dmat = pooling.context_distance_matrix(positions, points)
            for i in range(n):
                assert np.array_equal(dmat[i], pooling.context_distances(positions[i], points))


def test_social_assignment_matches_social_tensor():
    rng = np.random.default_rng(21)
    for _ in range(20):
        n = int(rng.integers(1, 8))
        dim = int(rng.integers(1, 6))
        positions = rng.uniform(-20, 20, size=(n, 2))
        hidden_rows = rng.normal(size=(n, dim))
        m = pooling.social_assignment(positions, SPEC)
        stacked = (m @ hidden_rows).reshape(n, SPEC.n_cells * dim)
        frame = {j: tuple(positions[j]) for j in range(n)}
        hidden = {j: hidden_rows[j] for j in range(n)}
        for i in range(n):
            expect = pooling.social_tensor(i, frame, hidden, SPEC).reshape(-1)
            assert np.array_equal(stacked[i], expect)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    frame = _random_frame(rng, max_agents=8)
    dim = 3
    hidden = {a: rng.normal(size=dim) for a in frame}
    agent = list(frame)[0]
    items = list(frame.items())

    base_grid = pooling.occupancy_grid(agent, frame, SPEC)
    base_tensor = pooling.social_tensor(agent, frame, hidden, SPEC)
    for _ in range(5):
        rng.shuffle(items)
        shuffled = dict(items)
        assert np.array_equal(pooling.occupancy_grid(agent, shuffled, SPEC), base_grid)
        assert np.allclose(
            pooling.social_tensor(agent, shuffled, hidden, SPEC), base_tensor, atol=1e-15
        )

    points = rng.uniform(-10, 10, size=(5, 2))
    perm = rng.permutation(5)
    base = pooling.context_distances((0.0, 0.0), points)
    assert np.array_equal(pooling.context_distances((0.0, 0.0), points[perm]), base[perm])


def test_translation_invariance():
    rng = np.random.default_rng(6)
    for _ in range(20):
        frame = _random_frame(rng, max_agents=6)
        points = rng.uniform(-10, 10, size=(4, 2))
        v = rng.uniform(-100, 100, size=2)
        agent = list(frame)[0]
        hidden = {a: rng.normal(size=2) for a in frame}
        moved = {a: (p[0] + v[0], p[1] + v[1]) for a, p in frame.items()}

        assert np.array_equal(
            pooling.occupancy_grid(agent, frame, SPEC),
            pooling.occupancy_grid(agent, moved, SPEC),
        )
        assert np.array_equal(
            pooling.social_tensor(agent, frame, hidden, SPEC),
            pooling.social_tensor(agent, moved, hidden, SPEC),
        )
        pos, mpos = frame[agent], moved[agent]
        assert np.array_equal(
            pooling.static_grid(pos, points, SPEC),
            pooling.static_grid(mpos, points + v, SPEC),
        )
        assert np.allclose(
            pooling.context_distances(pos, points),
            pooling.context_distances(mpos, points + v),
            atol=1e-9,
        )


def test_locality_bound():
    rng = np.random.default_rng(8)
    side, cells = 32.0, 8
    cutoff = side * math.sqrt(2) / 2.0 + math.sqrt(2) * side / cells
    for _ in range(200):
        # a point beyond the cutoff radius never lands in the grid
        angle = rng.uniform(0, 2 * math.pi)
        r = cutoff + rng.uniform(0.0, 50.0)
        other = (r * math.cos(angle), r * math.sin(angle))
        assert pooling.cell_index((0.0, 0.0), other, SPEC) is None
