"""Per-agent LSTM with pooled interaction inputs and a bivariate Gaussian head.

A model variant picks one human-human encoding (none, occupancy counts, or
social hidden-state pooling) and one human-space encoding (none, distances to
static points, or an occupancy-style grid over them). Each chosen encoding is
ReLU-embedded and concatenated to the embedded position, in the fixed order
position, context, human. The LSTM output state parameterizes a bivariate
Gaussian over the next position; training minimizes its negative
log-likelihood over the prediction segment of a window.

All forward math runs through the autodiff ops, so the same code serves
training (parameters as tape leaves) and inference (parameters as constants).
Batches are frames: row i of every (A, .) array belongs to agent i of the
window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import pooling
from .autodiff import Tensor
from .data import SceneWindow
from .errors import ConfigurationError, UsageError
from .pooling import GridSpec

LOG_2PI = math.log(2.0 * math.pi)
RHO_CAP = 1.0 - 1e-12  # tanh saturates to exactly 1.0 in float64; keep |rho| < 1
LOG_SIGMA_BOUND = 60.0  # keeps exp() finite for any finite hidden state

HUMAN_POOLING = ("none", "occupancy", "social")
CONTEXT_POOLING = ("none", "distance", "static_grid")

_LABELS = {
    ("none", "none"): "lstm",
    ("occupancy", "none"): "o-lstm",
    ("social", "none"): "s-lstm",
    ("none", "distance"): "ca-lstm",
    ("occupancy", "distance"): "ca-o-lstm",
    ("social", "distance"): "ca-s-lstm",
    ("none", "static_grid"): "ca-lstm-o",
    ("occupancy", "static_grid"): "ca-o-lstm-o",
    ("social", "static_grid"): "ca-s-lstm-o",
}
_BY_LABEL = {label: combo for combo, label in _LABELS.items()}
VARIANT_NAMES = tuple(_LABELS.values())


@dataclass(frozen=True)
class ModelVariant:
    human_pooling: str = "none"
    context_pooling: str = "none"

    def __post_init__(self):
        if self.human_pooling not in HUMAN_POOLING:
            raise ConfigurationError(
                f"human_pooling must be one of {HUMAN_POOLING}, got {self.human_pooling!r}"
            )
        if self.context_pooling not in CONTEXT_POOLING:
            raise ConfigurationError(
                f"context_pooling must be one of {CONTEXT_POOLING}, got {self.context_pooling!r}"
            )

    @property
    def name(self) -> str:
        return _LABELS[(self.human_pooling, self.context_pooling)]

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        try:
            human, context = _BY_LABEL[name]
        except KeyError:
            raise ConfigurationError(
                f"unknown variant {name!r}, expected one of {sorted(_BY_LABEL)}"
            ) from None
        return cls(human, context)

    @classmethod
    def all(cls) -> list["ModelVariant"]:
        return [cls(h, c) for h, c in _LABELS]


@dataclass(frozen=True)
class HyperParams:
    embed_dim: int = 64
    hidden_dim: int = 128
    grid: GridSpec = field(default_factory=GridSpec)
    static_points: int = 0  # K, taken from the scene

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigurationError("embed_dim and hidden_dim must be >= 1")
        if self.static_points < 0:
            raise ConfigurationError("static_points must be >= 0")

    def input_dim(self, variant: ModelVariant) -> int:
        blocks = 1 + (variant.context_pooling != "none") + (variant.human_pooling != "none")
        return self.embed_dim * blocks


def param_shapes(variant: ModelVariant, hyper: HyperParams) -> dict[str, tuple[int, ...]]:
    e, d = hyper.embed_dim, hyper.hidden_dim
    cells = hyper.grid.n_cells
    n = hyper.input_dim(variant)
    shapes: dict[str, tuple[int, ...]] = {
        "w_pos": (e, 2),
        "w_gates": (4 * d, d + n),
        "b_gates": (4 * d,),
        "w_head": (5, d),
        "b_head": (5,),
    }
    if variant.context_pooling == "distance":
        if hyper.static_points < 1:
            raise ConfigurationError(
                f"variant {variant.name!r} needs at least one static point, scene has none"
            )
        shapes["w_ctx"] = (e, hyper.static_points)
    elif variant.context_pooling == "static_grid":
        shapes["w_ctx"] = (e, cells)
    if variant.human_pooling == "occupancy":
        shapes["w_occ"] = (e, cells)
    elif variant.human_pooling == "social":
        shapes["w_soc"] = (e, cells * d)
    return shapes


def init_params(variant: ModelVariant, hyper: HyperParams, seed: int) -> dict[str, np.ndarray]:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in sorted(param_shapes(variant, hyper).items()):
        if len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[-1])
            params[name] = rng.uniform(-bound, bound, size=shape)
    d = hyper.hidden_dim
    params["b_gates"][d : 2 * d] = 1.0
    return params


def _check_shapes(params: dict, variant: ModelVariant, hyper: HyperParams) -> None:
    expected = param_shapes(variant, hyper)
    names = set(params)
    if names != set(expected):
        raise ConfigurationError(
            f"parameter set {sorted(names)} does not match variant {variant.name!r} "
            f"(expected {sorted(expected)})"
        )
    for name, shape in expected.items():
        got = np.asarray(params[name]).shape
        if got != shape:
            raise ConfigurationError(f"parameter {name}: shape {got} != expected {shape}")


def params_on_tape(params: dict, tape: ad.Tape) -> dict[str, Tensor]:
    return {k: tape.leaf(v, label=k) for k, v in params.items()}


def params_const(params: dict) -> dict[str, Tensor]:
    return {k: ad.const(v) for k, v in params.items()}


@dataclass
class AgentState:
    """LSTM carry for one agent (or a frame of agents when rows are stacked)."""

    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zero(cls, hidden_dim: int) -> "AgentState":
        return cls(np.zeros(hidden_dim), np.zeros(hidden_dim))


@dataclass
class GaussianParams:
    """Bivariate Gaussian over the next position: mean, per-axis sigma, correlation.

    Fields are Tensors; batched heads hold one row per agent. `log_sigma`
    carries the pre-exp head slice when available so the likelihood never
    round-trips through exp and log.
    """

    mu: Tensor
    sigma: Tensor
    rho: Tensor
    log_sigma: Tensor | None = None

    @classmethod
    def from_values(cls, mu, sigma, rho) -> "GaussianParams":
        return cls(ad.const(mu), ad.const(sigma), ad.const(rho))

    def values(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.mu.data, self.sigma.data, self.rho.data


def _as_batch(t: Tensor, width: int) -> tuple[Tensor, bool]:
    if t.ndim == 1:
        return ad.reshape(t, (1, width)), True
    return t, False


def _col(t: Tensor, j: int) -> Tensor:
    return ad.reshape(ad.narrow(t, j, 1, axis=1), (t.shape[0],))


def _flatten_pooled(value, structured_ndim: int, flat_dim: int, what: str) -> Tensor:
    """Accept an (A, flat) batch, a structured pooled array, or its flat form."""
    t = ad.as_tensor(value)
    if t.ndim == 2 and t.shape[1] == flat_dim:
        return t  # only collides with a (c, c) grid when c == 1, where both coincide
    if t.ndim == structured_ndim and t.data.size == flat_dim:
        return ad.reshape(t, (1, flat_dim))
    if t.ndim == 1 and t.shape[0] == flat_dim:
        return ad.reshape(t, (1, flat_dim))
    raise ConfigurationError(f"{what}: unexpected shape {t.shape}, need flat dim {flat_dim}")


def embed_input(
    position,
    pt: dict[str, Tensor],
    variant: ModelVariant,
    hyper: HyperParams,
    *,
    occupancy=None,
    social=None,
    static=None,
    context=None,
) -> Tensor:
    """ReLU-embed and concatenate the inputs the variant demands.

    position may be a single (2,) point or an (A, 2) frame; pooled inputs
    follow the same convention. Raises when an input the variant needs is
    missing or one it cannot use is supplied.
    """
    given = {"occupancy": occupancy, "social": social, "static": static, "context": context}
    needed = set()
    if variant.human_pooling == "occupancy":
        needed.add("occupancy")
    elif variant.human_pooling == "social":
        needed.add("social")
    if variant.context_pooling == "distance":
        needed.add("context")
    elif variant.context_pooling == "static_grid":
        needed.add("static")
    for name, value in given.items():
        if name in needed and value is None:
            raise ConfigurationError(f"variant {variant.name!r} requires the {name} input")
        if name not in needed and value is not None:
            raise ConfigurationError(f"variant {variant.name!r} does not take a {name} input")

    cells = hyper.grid.n_cells
    pos, single = _as_batch(ad.as_tensor(position), 2)
    parts = [ad.relu(ad.matmul(pos, ad.transpose(pt["w_pos"])))]
    if variant.context_pooling == "distance":
        ctx = _flatten_pooled(context, 1, hyper.static_points, "context distances")
        parts.append(ad.relu(ad.matmul(ctx, ad.transpose(pt["w_ctx"]))))
    elif variant.context_pooling == "static_grid":
        grid = _flatten_pooled(static, 2, cells, "static grid")
        parts.append(ad.relu(ad.matmul(grid, ad.transpose(pt["w_ctx"]))))
    if variant.human_pooling == "occupancy":
        grid = _flatten_pooled(occupancy, 2, cells, "occupancy grid")
        parts.append(ad.relu(ad.matmul(grid, ad.transpose(pt["w_occ"]))))
    elif variant.human_pooling == "social":
        tensor = _flatten_pooled(social, 3, cells * hyper.hidden_dim, "social tensor")
        parts.append(ad.relu(ad.matmul(tensor, ad.transpose(pt["w_soc"]))))
    out = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
    return ad.reshape(out, (out.shape[1],)) if single else out


def lstm_step(h_prev: Tensor, c_prev: Tensor, x: Tensor, pt: dict[str, Tensor], hidden_dim: int) -> tuple[Tensor, Tensor]:
    """One LSTM update for a frame of agents; gate order i, f, o, candidate."""
    d = hidden_dim
    z = ad.add(ad.matmul(ad.concat([h_prev, x], axis=1), ad.transpose(pt["w_gates"])), pt["b_gates"])
    gate_i = ad.sigmoid(ad.narrow(z, 0, d, axis=1))
    gate_f = ad.sigmoid(ad.narrow(z, d, d, axis=1))
    gate_o = ad.sigmoid(ad.narrow(z, 2 * d, d, axis=1))
    candidate = ad.tanh(ad.narrow(z, 3 * d, d, axis=1))
    c = ad.add(ad.mul(gate_f, c_prev), ad.mul(gate_i, candidate))
    h = ad.mul(gate_o, ad.tanh(c))
    return h, c


def step_agent(state: AgentState, x, params: dict, hyper: HyperParams) -> AgentState:
    """Single-agent convenience wrapper around the batched LSTM step."""
    pt = params_const(params)
    h = ad.const(np.asarray(state.h).reshape(1, -1))
    c = ad.const(np.asarray(state.c).reshape(1, -1))
    xt = ad.as_tensor(x)
    if xt.ndim == 1:
        xt = ad.reshape(xt, (1, xt.shape[0]))
    h2, c2 = lstm_step(h, c, xt, pt, hyper.hidden_dim)
    return AgentState(h2.data.reshape(-1), c2.data.reshape(-1))


def output_head(h: Tensor, pt: dict[str, Tensor]) -> GaussianParams:
    """Linear head to (mu_x, mu_y, log sigma_x, log sigma_y, arctanh-ish rho)."""
    ht = ad.as_tensor(h)
    h2, single = _as_batch(ht, ht.shape[-1])
    r = ad.add(ad.matmul(h2, ad.transpose(pt["w_head"])), pt["b_head"])
    mu = ad.narrow(r, 0, 2, axis=1)
    log_sigma = ad.clip(ad.narrow(r, 2, 2, axis=1), -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
    sigma = ad.exp(log_sigma)
    rho = ad.mul(ad.tanh(_col(r, 4)), ad.const(RHO_CAP))
    if single:
        return GaussianParams(
            ad.reshape(mu, (2,)),
            ad.reshape(sigma, (2,)),
            ad.reshape(rho, ()),
            ad.reshape(log_sigma, (2,)),
        )
    return GaussianParams(mu, sigma, rho, log_sigma)


def nll(target, g: GaussianParams) -> Tensor:
    """Negative log-density of the observed next position under g.

    Returns a scalar for a single (2,) target or an (A,) vector for a frame.
    """
    t = ad.as_tensor(target)
    single = t.ndim == 1
    t, _ = _as_batch(t, 2)
    mu, _ = _as_batch(g.mu, 2)
    sigma, _ = _as_batch(g.sigma, 2)
    rho = g.rho if g.rho.ndim == 1 else ad.reshape(g.rho, (1,))
    if g.log_sigma is not None:
        log_sigma, _ = _as_batch(g.log_sigma, 2)
    else:
        log_sigma = ad.log(sigma)

    dn = ad.div(ad.sub(t, mu), sigma)
    dx, dy = _col(dn, 0), _col(dn, 1)
    omr = ad.sub(ad.const(1.0), ad.square(rho))
    z = ad.sub(
        ad.add(ad.square(dx), ad.square(dy)),
        ad.mul(ad.const(2.0), ad.mul(rho, ad.mul(dx, dy))),
    )
    out = ad.add(
        ad.add(
            ad.add(ad.const(LOG_2PI), ad.add(_col(log_sigma, 0), _col(log_sigma, 1))),
            ad.mul(ad.const(0.5), ad.log(omr)),
        ),
        ad.div(z, ad.mul(ad.const(2.0), omr)),
    )
    return ad.reshape(out, ()) if single else out


def sample_position(g: GaussianParams, rng: np.random.Generator) -> np.ndarray:
    """Draw next positions: correlated pair from two standard normals per agent."""
    mu, sigma, rho = g.values()
    single = mu.ndim == 1
    mu = mu.reshape(-1, 2)
    sigma = sigma.reshape(-1, 2)
    rho = np.asarray(rho).reshape(-1)
    z = rng.standard_normal((mu.shape[0], 2))
    x = mu[:, 0] + sigma[:, 0] * z[:, 0]
    y = mu[:, 1] + sigma[:, 1] * (rho * z[:, 0] + np.sqrt(1.0 - rho * rho) * z[:, 1])
    out = np.stack([x, y], axis=1)
    return out[0] if single else out


def _pooled_inputs(variant, positions, extras, scene_points, grid, h_prev, hidden_dim):
    """Constant pooled encodings for one frame; social goes through the tape."""
    kwargs: dict = {}
    if variant.human_pooling == "occupancy":
        kwargs["occupancy"] = pooling.occupancy_grids(positions, grid, extras=extras)
    elif variant.human_pooling == "social":
        assign = pooling.social_assignment(positions, grid)
        a = positions.shape[0]
        kwargs["social"] = ad.reshape(
            ad.matmul(ad.const(assign), h_prev), (a, grid.n_cells * hidden_dim)
        )
    if variant.context_pooling == "distance":
        kwargs["context"] = pooling.context_distance_matrix(positions, scene_points)
    elif variant.context_pooling == "static_grid":
        kwargs["static"] = pooling.static_grids(positions, scene_points, grid)
    return kwargs


def validate_scene_for_variant(variant: ModelVariant, hyper: HyperParams, n_points: int) -> None:
    if variant.context_pooling != "none" and n_points < 1:
        raise ConfigurationError(
            f"variant {variant.name!r} needs static scene points, scene has none"
        )
    if variant.context_pooling == "distance" and n_points != hyper.static_points:
        raise ConfigurationError(
            f"model was built for {hyper.static_points} static points, scene has {n_points}"
        )


def sequence_loss(
    window: SceneWindow,
    scene_points,
    pt: dict[str, Tensor] | dict[str, np.ndarray],
    variant: ModelVariant,
    hyper: HyperParams,
    *,
    grid: GridSpec | None = None,
    teacher_forcing: bool = True,
    full_range: bool = False,
) -> Tensor:
    """Mean per-agent per-step NLL of a window, run jointly over its agents.

    Under teacher forcing every input (and every pooled encoding) comes from
    ground truth; otherwise predicted means are fed back after the observation
    segment, with grid memberships and distances recomputed from the predicted
    values but treated as constants. Scored steps are the prediction segment
    unless full_range asks for every transition.

    pt may hold tape leaves (training) or plain arrays/constants (evaluation).
    """
    if not all(isinstance(v, Tensor) for v in pt.values()):
        pt = params_const(pt)
    scene_points = np.asarray(scene_points, dtype=np.float64).reshape(-1, 2)
    validate_scene_for_variant(variant, hyper, len(scene_points))
    grid = grid or hyper.grid
    d = hyper.hidden_dim
    a = window.n_agents
    length = window.length
    if a == 0:
        raise UsageError("window has no full-span agents")
    if length < 2:
        raise UsageError("window too short: no transitions to score")
    first_scored = 1 if full_range else window.t_obs
    if first_scored > length - 1:
        raise UsageError(
            f"window too short: observation uses all {length} frames, nothing to predict"
        )

    h = ad.const(np.zeros((a, d)))
    c = ad.const(np.zeros((a, d)))
    total: Tensor | None = None
    current: Tensor = ad.const(window.positions[:, 0, :])
    for t in range(length - 1):
        if teacher_forcing or t < window.t_obs:
            current = ad.const(window.positions[:, t, :])
            pool_positions = window.positions[:, t, :]
            extras = window.extra_positions(t)
        else:
            pool_positions = current.data
            extras = np.zeros((0, 2))
        pooled = _pooled_inputs(variant, pool_positions, extras, scene_points, grid, h, d)
        x = embed_input(current, pt, variant, hyper, **pooled)
        h, c = lstm_step(h, c, x, pt, d)
        g = output_head(h, pt)
        if t + 1 >= first_scored:
            term = ad.sum_all(nll(window.positions[:, t + 1, :], g))
            total = term if total is None else ad.add(total, term)
        if not teacher_forcing and t + 1 >= window.t_obs:
            current = g.mu
    n_scored = length - first_scored
    return ad.div(total, ad.const(float(a * n_scored)))


CHECKPOINT_FORMAT = "calstm-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    variant: ModelVariant
    hyper: HyperParams
    params: dict[str, np.ndarray]
    seed: int | None = None


def save_checkpoint(path, variant: ModelVariant, hyper: HyperParams, params: dict, seed: int | None = None) -> None:
    """Versioned JSON checkpoint; float values round-trip bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": {"human_pooling": variant.human_pooling, "context_pooling": variant.context_pooling},
        "hyper": {
            "embed_dim": hyper.embed_dim,
            "hidden_dim": hyper.hidden_dim,
            "grid": {
                "neighborhood_side": hyper.grid.neighborhood_side,
                "cells_per_side": hyper.grid.cells_per_side,
            },
            "static_points": hyper.static_points,
        },
        "seed": seed,
        "params": {
            name: {"shape": list(np.asarray(v).shape), "values": np.asarray(v).reshape(-1).tolist()}
            for name, v in sorted(params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    variant = ModelVariant(**doc["variant"])
    hv = doc["hyper"]
    hyper = HyperParams(
        embed_dim=hv["embed_dim"],
        hidden_dim=hv["hidden_dim"],
        grid=GridSpec(**hv["grid"]),
        static_points=hv["static_points"],
    )
    params = {
        name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in doc["params"].items()
    }
    _check_shapes(params, variant, hyper)
    return Checkpoint(variant, hyper, params, doc.get("seed"))


class Model:
    """Variant + hyperparameters + weights, with a frame-at-a-time step API."""

    def __init__(self, variant: ModelVariant, hyper: HyperParams, params: dict[str, np.ndarray]):
        _check_shapes(params, variant, hyper)
        self.variant = variant
        self.hyper = hyper
        self.params = params

    @classmethod
    def init(cls, variant: ModelVariant, hyper: HyperParams, seed: int) -> "Model":
        return cls(variant, hyper, init_params(variant, hyper, seed))

    @classmethod
    def from_checkpoint(cls, path) -> "Model":
        ck = load_checkpoint(path)
        return cls(ck.variant, ck.hyper, ck.params)

    def save(self, path, seed: int | None = None) -> None:
        save_checkpoint(path, self.variant, self.hyper, self.params, seed)

    def initial_state(self, n_agents: int) -> tuple[np.ndarray, np.ndarray]:
        d = self.hyper.hidden_dim
        return np.zeros((n_agents, d)), np.zeros((n_agents, d))

    def step(
        self,
        state: tuple[np.ndarray, np.ndarray],
        positions: np.ndarray,
        extras: np.ndarray,
        scene_points: np.ndarray,
        grid: GridSpec | None = None,
    ) -> tuple[tuple[np.ndarray, np.ndarray], GaussianParams]:
        """Advance all agents one step from `positions`; returns the new carry
        and the Gaussian over each agent's next position."""
        grid = grid or self.hyper.grid
        pt = params_const(self.params)
        h = ad.const(state[0])
        c = ad.const(state[1])
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        pooled = _pooled_inputs(
            self.variant, positions, extras, scene_points, grid, h, self.hyper.hidden_dim
        )
        x = embed_input(ad.const(positions), pt, self.variant, self.hyper, **pooled)
        h2, c2 = lstm_step(h, c, x, pt, self.hyper.hidden_dim)
        g = output_head(h2, pt)
        return (h2.data, c2.data), g


