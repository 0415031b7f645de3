"""Closed-loop Euler rollout of the fused policy, metrics, field export.

The loop reads a context from the schedule, forms s = [c, x], evaluates the
selected strategy's action, checks success against the goal with the highest
kernel activation, then integrates x <- x + dt * action. Strategies:

  kmp        learned field only
  kmp+stab   learned field + stabilizer, goal mass folded into the field
  kmp+goal   learned field + goal attractor (pi_sp = 0)
  full       the complete three-expert mixture
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .demonstrations import TrainingSet
from .errors import (
    ConfigurationError,
    DataError,
    NumericalError,
    UnsupportedProjectionError,
    UsageError,
)
from .fusion import (
    FusionParams,
    Goals,
    goal_velocity,
    mixing_coefficients,
    position_lengths,
    stabilizing_from_gradient,
)
from .kmp import KmpModel, epistemic_with_gradient, predict_mean

STRATEGIES = ("kmp", "kmp+stab", "kmp+goal", "full")


def check_strategy(name: str) -> str:
    if name not in STRATEGIES:
        raise UsageError(f"unknown strategy {name!r}; one of {', '.join(STRATEGIES)}")
    return name


# ---------------------------------------------------------------------------
# Context schedules


@dataclass(frozen=True)
class ContextSchedule:
    """Context source for a rollout: none, constant, piecewise, or external."""

    kind: str
    dims: int
    entries: tuple = ()   # piecewise: ((start_iteration, context), ...)

    @classmethod
    def none(cls) -> "ContextSchedule":
        return cls(kind="none", dims=0)

    @classmethod
    def constant(cls, context: Sequence[float]) -> "ContextSchedule":
        c = np.asarray(context, dtype=float).reshape(-1)
        return cls(kind="constant", dims=c.shape[0], entries=((0, tuple(c.tolist())),))

    @classmethod
    def piecewise(cls, entries: Sequence[tuple[int, Sequence[float]]]) -> "ContextSchedule":
        if not entries:
            raise ConfigurationError("piecewise schedule needs at least one entry")
        normed = []
        for start, c in entries:
            c = np.asarray(c, dtype=float).reshape(-1)
            normed.append((int(start), tuple(c.tolist())))
        starts = [s for s, _ in normed]
        if starts[0] != 0:
            raise ConfigurationError("piecewise schedule must start at iteration 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ConfigurationError("piecewise entries must be strictly increasing")
        dims = len(normed[0][1])
        if any(len(c) != dims for _, c in normed):
            raise ConfigurationError("piecewise contexts must share one dimension")
        return cls(kind="piecewise", dims=dims, entries=tuple(normed))

    @classmethod
    def external(cls, dims: int) -> "ContextSchedule":
        return cls(kind="external", dims=dims)

    def context_at(self, iteration: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(0)
        if self.kind == "constant":
            return np.asarray(self.entries[0][1])
        if self.kind == "piecewise":
            current = self.entries[0][1]
            for start, c in self.entries:
                if start <= iteration:
                    current = c
                else:
                    break
            return np.asarray(current)
        raise ConfigurationError("external schedules are driven by the caller")


# ---------------------------------------------------------------------------
# Stepping


@dataclass(frozen=True)
class StepAction:
    """Everything the policy produced at one state."""

    mean: np.ndarray        # (O,) blended velocity for the strategy
    weights: np.ndarray     # (3,) applied (field, stabilizer, goal) weights
    k_max: float
    goal_index: int
    sigma_ep: float
    expert_means: np.ndarray  # (3, O)


def policy_step(
    model: KmpModel,
    goals: Goals,
    params: FusionParams,
    strategy: str,
    s_star: np.ndarray,
) -> StepAction:
    """Evaluate one strategy at one input; shared by offline and live loops."""
    o = model.dims.output
    coeff = mixing_coefficients(s_star, goals.inputs, model.hyper.lengths, params.pi_sp)
    sigma_ep, grad = epistemic_with_gradient(model, s_star)

    if strategy == "kmp":
        weights = np.array([1.0, 0.0, 0.0])
    elif strategy == "kmp+stab":
        weights = np.array([1.0 - params.pi_sp, params.pi_sp, 0.0])
    elif strategy == "kmp+goal":
        weights = np.array([1.0 - coeff.k_max, 0.0, coeff.k_max])
    elif strategy == "full":
        weights = coeff.as_array()
    else:
        raise UsageError(f"unknown strategy {strategy!r}")

    mu_kmp = predict_mean(model, s_star)
    mu_sp = (
        stabilizing_from_gradient(sigma_ep, grad, position_lengths(model), params)
        if weights[1] > 0.0
        else np.zeros(o)
    )
    mu_g = (
        goal_velocity(s_star[-o:], goals.positions, coeff.goal_index, params)
        if weights[2] > 0.0
        else np.zeros(o)
    )
    experts = np.stack([mu_kmp, mu_sp, mu_g])
    return StepAction(
        mean=weights @ experts,
        weights=weights,
        k_max=coeff.k_max,
        goal_index=coeff.goal_index,
        sigma_ep=sigma_ep,
        expert_means=experts,
    )


# ---------------------------------------------------------------------------
# Rollout


@dataclass(frozen=True)
class RolloutConfig:
    x0: np.ndarray
    schedule: ContextSchedule
    max_iters: int = 500
    success_radius: float = 0.01
    dt: float = 0.05            # integration step of the control loop (20 Hz)
    seed: int = 0
    divergence_radius: float | None = None   # per-step displacement limit

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.success_radius <= 0 or self.dt <= 0:
            raise ConfigurationError("success_radius and dt must be > 0")


@dataclass
class RolloutTrace:
    """Per-iteration record of the loop; grows via append, then freezes."""

    iterations: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    k_max: list = field(default_factory=list)
    goal_index: list = field(default_factory=list)
    sigma_ep: list = field(default_factory=list)

    def append(self, t: int, s: np.ndarray, action: StepAction) -> None:
        self.iterations.append(t)
        self.inputs.append(s.copy())
        self.actions.append(action.mean.copy())
        self.weights.append(action.weights.copy())
        self.k_max.append(action.k_max)
        self.goal_index.append(action.goal_index)
        self.sigma_ep.append(action.sigma_ep)

    def __len__(self) -> int:
        return len(self.iterations)

    def positions(self, position_dim: int) -> np.ndarray:
        return np.asarray(self.inputs)[:, -position_dim:]

    def contexts(self, position_dim: int) -> np.ndarray:
        stacked = np.asarray(self.inputs)
        return stacked[:, : stacked.shape[1] - position_dim]

    def to_dict(self) -> dict:
        return {
            "iterations": list(self.iterations),
            "inputs": np.asarray(self.inputs).tolist(),
            "actions": np.asarray(self.actions).tolist(),
            "weights": np.asarray(self.weights).tolist(),
            "k_max": list(map(float, self.k_max)),
            "goal_index": list(map(int, self.goal_index)),
            "sigma_ep": list(map(float, self.sigma_ep)),
        }


@dataclass(frozen=True)
class RolloutResult:
    trace: RolloutTrace
    success: bool
    iterations: int
    terminal_distance: float


class DivergedError(NumericalError):
    """The state left the finite/bounded region; carries the partial trace."""

    def __init__(self, message: str, trace: RolloutTrace):
        super().__init__(message)
        self.trace = trace


def rollout(
    model: KmpModel,
    goals: Goals,
    params: FusionParams,
    config: RolloutConfig,
    strategy: str = "full",
) -> RolloutResult:
    """Integrate the strategy from config.x0 until goal proximity or the cap."""
    check_strategy(strategy)
    if config.schedule.kind == "external":
        raise ConfigurationError("external schedules cannot drive an offline rollout")
    p = model.dims.output
    if config.x0.shape[0] != p:
        raise DataError(f"x0 dim {config.x0.shape[0]} != position dim {p}")
    c_dim = model.dims.input - p
    if config.schedule.dims != c_dim:
        raise DataError(
            f"schedule context dim {config.schedule.dims} != model context dim {c_dim}"
        )

    trace = RolloutTrace()
    x = config.x0.copy()
    for t in range(config.max_iters + 1):
        s = np.concatenate([config.schedule.context_at(t), x])
        action = policy_step(model, goals, params, strategy, s)
        trace.append(t, s, action)
        distance = float(np.linalg.norm(x - goals.positions[action.goal_index]))
        if distance < config.success_radius:
            return RolloutResult(trace, True, t, distance)
        if t == config.max_iters:
            return RolloutResult(trace, False, config.max_iters, distance)
        step = config.dt * action.mean
        if not np.isfinite(step).all():
            raise DivergedError(f"non-finite action at iteration {t}", trace)
        if config.divergence_radius is not None and np.linalg.norm(step) > config.divergence_radius:
            raise DivergedError(
                f"step of norm {np.linalg.norm(step):g} exceeds divergence radius "
                f"{config.divergence_radius:g} at iteration {t}",
                trace,
            )
        x = x + step
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Metrics


def rms_to_demos(positions: np.ndarray | RolloutTrace, demos: TrainingSet) -> float:
    """Root mean square over visited states of the distance to the nearest
    demonstrated position."""
    if isinstance(positions, RolloutTrace):
        positions = positions.positions(demos.dims.position)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] == 0:
        raise DataError("empty trace")
    targets = demos.all_positions()
    total = 0.0
    for chunk in np.array_split(positions, max(1, positions.shape[0] // 2048 + 1)):
        d2 = cdist(chunk, targets, "sqeuclidean").min(axis=1)
        total += float(d2.sum())
    return float(np.sqrt(total / positions.shape[0]))


@dataclass(frozen=True)
class EvalReport:
    strategy: str
    success_pct: float
    avg_iterations: float
    rms: float
    trials: int
    successes: int

    def __post_init__(self):
        if not (0.0 <= self.success_pct <= 100.0) or self.rms < 0:
            raise DataError("malformed evaluation report")


def evaluate(
    model: KmpModel,
    goals: Goals,
    params: FusionParams,
    starts: Sequence[np.ndarray],
    schedule: ContextSchedule,
    strategy: str,
    demos: TrainingSet,
    base_config: RolloutConfig | None = None,
    schedules: Sequence[ContextSchedule] | None = None,
) -> EvalReport:
    """Run one rollout per start and pool the Table-style metrics.

    ``schedules`` optionally pairs one schedule per start (context sweeps);
    otherwise ``schedule`` applies to every trial. Diverged rollouts count as
    failures at the iteration cap.
    """
    if len(starts) == 0:
        raise ConfigurationError("at least one start required")
    if schedules is not None and len(schedules) != len(starts):
        raise ConfigurationError("one schedule per start required")
    template = base_config or RolloutConfig(
        x0=np.zeros(model.dims.output), schedule=schedule
    )
    successes = 0
    iterations = []
    visited = []
    for i, x0 in enumerate(starts):
        sched = schedules[i] if schedules is not None else schedule
        config = replace(template, x0=np.asarray(x0, dtype=float), schedule=sched)
        try:
            result = rollout(model, goals, params, config, strategy)
            trace = result.trace
            successes += int(result.success)
            iterations.append(result.iterations)
        except DivergedError as exc:
            trace = exc.trace
            iterations.append(config.max_iters)
        if len(trace):
            pos = trace.positions(model.dims.output)
            visited.append(pos[np.isfinite(pos).all(axis=1)])
    pooled = np.vstack(visited)
    return EvalReport(
        strategy=strategy,
        success_pct=100.0 * successes / len(starts),
        avg_iterations=float(np.mean(iterations)),
        rms=rms_to_demos(pooled, demos),
        trials=len(starts),
        successes=successes,
    )


def random_starts(bounds: np.ndarray, n: int, seed: int) -> np.ndarray:
    """n uniform draws inside a (P, 2) low/high box; deterministic per seed."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if (bounds[:, 1] <= bounds[:, 0]).any():
        raise ConfigurationError("degenerate start box (zero or negative width)")
    rng = np.random.default_rng(seed)
    return rng.uniform(bounds[:, 0], bounds[:, 1], size=(n, bounds.shape[0]))


def inflate_bounds(bounds: np.ndarray, fraction: float = 0.2) -> np.ndarray:
    """Grow a (P, 2) box by a fraction of its width on each side."""
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    width = bounds[:, 1] - bounds[:, 0]
    return np.stack(
        [bounds[:, 0] - fraction * width, bounds[:, 1] + fraction * width], axis=1
    )


# ---------------------------------------------------------------------------
# Field export


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    bounds: np.ndarray   # [[xmin, xmax], [ymin, ymax]]

    def __post_init__(self):
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError("grid must be at least 2x2")
        if self.bounds.shape != (2, 2) or (self.bounds[:, 1] <= self.bounds[:, 0]).any():
            raise ConfigurationError("grid bounds must be [[xmin,xmax],[ymin,ymax]]")


@dataclass(frozen=True)
class FieldGrid:
    """Strategy action and epistemic uncertainty on a planar lattice."""

    xs: np.ndarray           # (nx,)
    ys: np.ndarray           # (ny,)
    velocity: np.ndarray     # (ny, nx, 2)
    sigma_ep: np.ndarray     # (ny, nx)
    context: np.ndarray      # (C,)
    strategy: str

    def rows(self):
        """Row-major records (x, y, ux, uy, sigma_ep)."""
        for iy, y in enumerate(self.ys):
            for ix, x in enumerate(self.xs):
                u = self.velocity[iy, ix]
                yield float(x), float(y), float(u[0]), float(u[1]), float(self.sigma_ep[iy, ix])

    def to_csv(self) -> str:
        lines = ["x,y,ux,uy,sigma_ep"]
        lines += [f"{x!r},{y!r},{ux!r},{uy!r},{se!r}" for x, y, ux, uy, se in self.rows()]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "xs": self.xs.tolist(),
            "ys": self.ys.tolist(),
            "velocity": self.velocity.tolist(),
            "sigma_ep": self.sigma_ep.tolist(),
            "context": self.context.tolist(),
            "strategy": self.strategy,
        }


def vector_field_grid(
    model: KmpModel,
    goals: Goals,
    params: FusionParams,
    grid: GridSpec,
    context: Sequence[float] | None,
    strategy: str = "full",
) -> FieldGrid:
    """Evaluate the strategy's action and sigma_ep on every lattice node."""
    check_strategy(strategy)
    p = model.dims.output
    if p != 2:
        raise UnsupportedProjectionError(
            f"field export only supports planar positions, got P={p}"
        )
    c_dim = model.dims.input - p
    c = np.zeros(0) if context is None else np.asarray(context, dtype=float).reshape(-1)
    if c.shape[0] != c_dim:
        raise UsageError(f"context of dim {c_dim} required, got {c.shape[0]}")
    xs = np.linspace(grid.bounds[0, 0], grid.bounds[0, 1], grid.nx)
    ys = np.linspace(grid.bounds[1, 0], grid.bounds[1, 1], grid.ny)
    velocity = np.empty((grid.ny, grid.nx, 2))
    sigma = np.empty((grid.ny, grid.nx))
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            s = np.concatenate([c, [x, y]])
            action = policy_step(model, goals, params, strategy, s)
            velocity[iy, ix] = action.mean
            sigma[iy, ix] = action.sigma_ep
    return FieldGrid(
        xs=xs, ys=ys, velocity=velocity, sigma_ep=sigma, context=c, strategy=strategy
    )


def save_trace(path: str | Path, result: RolloutResult) -> None:
    doc = {
        "success": result.success,
        "iterations": result.iterations,
        "terminal_distance": result.terminal_distance,
        "trace": result.trace.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))
