"""Demonstration data model, velocity derivation, and corpus files.

A corpus is a versioned JSON document::

    {
      "version": 1,
      "dims": {"context": C, "position": P},
      "demonstrations": [
        {"id": str, "dt": number,
         "positions": [[...P numbers...], ...],
         "contexts":  [[...C numbers...], ...] | null},
        ...
      ]
    }

Numbers are finite IEEE doubles; per-sample rows are stored row-major.
Training inputs are the concatenation context (+) position, outputs are
Cartesian velocities obtained by finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import letters
from .errors import (
    ConfigurationError,
    DataError,
    DimensionMismatchError,
    SchemaError,
)

CORPUS_VERSION = 1


class Dims(NamedTuple):
    """Input/output dimensions: context C, position P, input I=C+P, output O=P."""

    context: int
    position: int
    input: int
    output: int


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Demonstration:
    """One demonstrated trajectory sampled at a fixed period ``dt``."""

    id: str
    dt: float
    positions: np.ndarray          # (M, P)
    contexts: np.ndarray | None = None  # (M, C) or absent

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[0] < 2:
            raise DataError(f"demonstration {self.id!r}: needs at least 2 samples")
        if not np.isfinite(pos).all():
            raise DataError(f"demonstration {self.id!r}: non-finite positions")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DataError(f"demonstration {self.id!r}: dt must be > 0")
        object.__setattr__(self, "positions", _frozen(pos))
        if self.contexts is not None:
            ctx = np.atleast_2d(np.asarray(self.contexts, dtype=float))
            if ctx.shape[0] != pos.shape[0]:
                raise DimensionMismatchError(
                    f"demonstration {self.id!r}: {ctx.shape[0]} context rows for "
                    f"{pos.shape[0]} positions"
                )
            if not np.isfinite(ctx).all():
                raise DataError(f"demonstration {self.id!r}: non-finite contexts")
            object.__setattr__(self, "contexts", _frozen(ctx))

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def position_dim(self) -> int:
        return self.positions.shape[1]

    @property
    def context_dim(self) -> int:
        return 0 if self.contexts is None else self.contexts.shape[1]

    def inputs(self) -> np.ndarray:
        """Per-sample policy inputs, context (+) position, shape (M, C+P)."""
        if self.contexts is None:
            return self.positions
        return np.hstack([self.contexts, self.positions])


def compute_velocities(demo: Demonstration) -> np.ndarray:
    """Velocities from positions: central differences inside, one-sided at the ends."""
    x = demo.positions
    v = np.empty_like(x)
    v[1:-1] = (x[2:] - x[:-2]) / (2.0 * demo.dt)
    v[0] = (x[1] - x[0]) / demo.dt
    v[-1] = (x[-1] - x[-2]) / demo.dt
    return v


@dataclass(frozen=True)
class TrainingSample:
    """A single (input, output) regression pair."""

    input: np.ndarray   # (I,)
    output: np.ndarray  # (O,)


@dataclass(frozen=True)
class TrainingSet:
    """Stacked training data plus the per-demonstration goals.

    Immutable after construction; safe to share across threads.
    """

    demonstrations: tuple[Demonstration, ...]
    inputs: np.ndarray          # (n, I)
    outputs: np.ndarray         # (n, O)
    dims: Dims
    goal_inputs: np.ndarray     # (H, I), final input of each demonstration
    goal_positions: np.ndarray  # (H, P), final position of each demonstration

    def __post_init__(self):
        for name in ("inputs", "outputs", "goal_inputs", "goal_positions"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.goal_inputs.shape[0] != len(self.demonstrations):
            raise DimensionMismatchError("one goal per demonstration required")
        if self.inputs.shape[1] != self.dims.input or self.outputs.shape[1] != self.dims.output:
            raise DimensionMismatchError("sample dims disagree with declared dims")

    @property
    def n_demos(self) -> int:
        return len(self.demonstrations)

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    def samples(self) -> Iterator[TrainingSample]:
        for s, xi in zip(self.inputs, self.outputs):
            yield TrainingSample(s, xi)

    def joint(self) -> np.ndarray:
        """Stacked (input, output) rows, shape (n, I+O); the EM fitting space."""
        return np.hstack([self.inputs, self.outputs])

    def all_positions(self) -> np.ndarray:
        """Every demonstrated position, stacked (used by RMS-to-demonstrations)."""
        return np.vstack([d.positions for d in self.demonstrations])

    def position_bounds(self) -> np.ndarray:
        """Tight per-dimension bounding box of the demonstrated positions, (P, 2)."""
        pos = self.all_positions()
        return np.stack([pos.min(axis=0), pos.max(axis=0)], axis=1)


def build_training_set(demos: Sequence[Demonstration]) -> TrainingSet:
    """Assemble a TrainingSet: derive velocities, stack samples, extract goals."""
    if not demos:
        raise DataError("no demonstrations given")
    c_dim = demos[0].context_dim
    p_dim = demos[0].position_dim
    for d in demos:
        if d.context_dim != c_dim or d.position_dim != p_dim:
            raise DimensionMismatchError(
                f"demonstration {d.id!r} has dims (C={d.context_dim}, P={d.position_dim}), "
                f"expected (C={c_dim}, P={p_dim})"
            )
    dims = Dims(c_dim, p_dim, c_dim + p_dim, p_dim)
    inputs = np.vstack([d.inputs() for d in demos])
    outputs = np.vstack([compute_velocities(d) for d in demos])
    goal_inputs = np.vstack([d.inputs()[-1] for d in demos])
    goal_positions = np.vstack([d.positions[-1] for d in demos])
    return TrainingSet(
        demonstrations=tuple(demos),
        inputs=inputs,
        outputs=outputs,
        dims=dims,
        goal_inputs=goal_inputs,
        goal_positions=goal_positions,
    )


# ---------------------------------------------------------------------------
# Corpus (de)serialization


def _require(doc: dict, field: str, kind, where: str):
    if field not in doc:
        raise SchemaError(f"{where}.{field}", "missing")
    value = doc[field]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{where}.{field}", f"expected {kind.__name__}")
    return value


def corpus_to_dict(demos: Sequence[Demonstration]) -> dict:
    if not demos:
        raise DataError("cannot serialize an empty corpus")
    c_dim, p_dim = demos[0].context_dim, demos[0].position_dim
    return {
        "version": CORPUS_VERSION,
        "dims": {"context": c_dim, "position": p_dim},
        "demonstrations": [
            {
                "id": d.id,
                "dt": d.dt,
                "positions": d.positions.tolist(),
                "contexts": None if d.contexts is None else d.contexts.tolist(),
            }
            for d in demos
        ],
    }


def corpus_from_dict(doc: dict) -> list[Demonstration]:
    version = _require(doc, "version", int, "$")
    if version != CORPUS_VERSION:
        raise SchemaError("$.version", f"unsupported version {version}")
    dims = _require(doc, "dims", dict, "$")
    c_dim = _require(dims, "context", int, "$.dims")
    p_dim = _require(dims, "position", int, "$.dims")
    if p_dim < 1 or c_dim < 0:
        raise SchemaError("$.dims", "position must be >= 1 and context >= 0")
    entries = _require(doc, "demonstrations", list, "$")
    if not entries:
        raise SchemaError("$.demonstrations", "must not be empty")
    demos = []
    for i, entry in enumerate(entries):
        where = f"$.demonstrations[{i}]"
        if not isinstance(entry, dict):
            raise SchemaError(where, "expected object")
        demo_id = _require(entry, "id", str, where)
        dt = _require(entry, "dt", (int, float), where)
        positions = np.asarray(_require(entry, "positions", list, where), dtype=float)
        if positions.ndim != 2 or positions.shape[1] != p_dim:
            raise SchemaError(f"{where}.positions", f"expected rows of {p_dim} numbers")
        raw_ctx = entry.get("contexts")
        contexts = None
        if c_dim > 0:
            if raw_ctx is None:
                raise SchemaError(f"{where}.contexts", "required when dims.context > 0")
            contexts = np.asarray(raw_ctx, dtype=float)
            if contexts.ndim != 2 or contexts.shape[1] != c_dim:
                raise DimensionMismatchError(
                    f"{where}.contexts: expected rows of {c_dim} numbers"
                )
        elif raw_ctx is not None:
            raise SchemaError(f"{where}.contexts", "must be null when dims.context == 0")
        try:
            demos.append(
                Demonstration(id=demo_id, dt=float(dt), positions=positions, contexts=contexts)
            )
        except DimensionMismatchError:
            raise
        except DataError as exc:
            raise SchemaError(where, str(exc)) from exc
    return demos


def save_corpus(path: str | Path, demos: Sequence[Demonstration]) -> None:
    Path(path).write_text(json.dumps(corpus_to_dict(demos), indent=1, sort_keys=True))


def load_corpus(path: str | Path) -> list[Demonstration]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"corpus file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected a JSON object")
    return corpus_from_dict(doc)


def load_training_set(path: str | Path) -> TrainingSet:
    """Load a corpus file and assemble the TrainingSet (velocities + goals)."""
    return build_training_set(load_corpus(path))


# ---------------------------------------------------------------------------
# Synthetic corpora


def synthetic_handwriting_demos(
    shape: str,
    n_demos: int = 7,
    n_points: int = 100,
    dt: float = 0.05,
    seed: int = 0,
) -> list[Demonstration]:
    """Desk-scale stand-in for a handwriting benchmark shape.

    Perturbed traces of one letter template; all demonstrations share the
    template's final point exactly, mimicking recordings that end on a common
    goal pose.
    """
    if n_demos < 1:
        raise ConfigurationError("n_demos must be >= 1")
    rng = np.random.default_rng(seed)
    return [
        Demonstration(
            id=f"{shape}-{k}",
            dt=dt,
            positions=letters.sample_shape(shape, n_points, rng),
        )
        for k in range(n_demos)
    ]


def generate_context_letter_set(
    letter_shapes: Sequence[str],
    cluster_centers: Sequence[Sequence[float]],
    cluster_std: float,
    demos_per_letter: int,
    seed: int,
    n_points: int = 100,
    dt: float = 0.05,
) -> TrainingSet:
    """Synthesize the context experiment: one letter per context cluster.

    Each demonstration of letter ``i`` carries a context vector drawn once
    from an isotropic Gaussian centered at ``cluster_centers[i]`` and held
    constant along the whole trajectory.
    """
    if len(letter_shapes) < 3:
        raise ConfigurationError("need at least 3 letter templates")
    centers = np.asarray(cluster_centers, dtype=float)
    if centers.ndim != 2 or centers.shape[0] != len(letter_shapes):
        raise ConfigurationError("one cluster center per letter template required")
    if len({tuple(c) for c in centers.tolist()}) != centers.shape[0]:
        raise ConfigurationError("cluster centers must be distinct")
    if demos_per_letter < 1:
        raise ConfigurationError("demos_per_letter must be >= 1")
    if cluster_std < 0:
        raise ConfigurationError("cluster_std must be >= 0")
    rng = np.random.default_rng(seed)
    demos = []
    for shape, center in zip(letter_shapes, centers):
        for k in range(demos_per_letter):
            positions = letters.sample_shape(shape, n_points, rng)
            context = center + rng.normal(0.0, cluster_std, size=center.shape)
            demos.append(
                Demonstration(
                    id=f"{shape}-{k}",
                    dt=dt,
                    positions=positions,
                    contexts=np.tile(context, (n_points, 1)),
                )
            )
    return build_training_set(demos)
