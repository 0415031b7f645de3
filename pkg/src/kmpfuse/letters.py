"""Parametric 2D letter shapes used to synthesize handwriting corpora.

Every template lives in the unit box [-0.5, 0.5]^2 and is traced by a cubic
spline through a fixed set of control points, with an eased timing profile
that slows (but never stops) the pen near the stroke ends. All perturbed
variants of a template share the exact same final point so that a set of
demonstrations has a common goal.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError

# Control polylines, drawn the way a human would write the letter.
_SHAPES: dict[str, list[tuple[float, float]]] = {
    "zee": [
        (-0.42, 0.46), (0.00, 0.47), (0.40, 0.44), (0.02, 0.02),
        (-0.40, -0.44), (0.00, -0.47), (0.42, -0.46),
    ],
    "ess": [
        (0.38, 0.42), (0.00, 0.47), (-0.35, 0.30), (0.00, 0.05),
        (0.35, -0.25), (0.00, -0.47), (-0.38, -0.44),
    ],
    "jay": [
        (0.30, 0.47), (0.32, 0.10), (0.28, -0.25), (0.00, -0.45),
        (-0.30, -0.35), (-0.38, -0.10),
    ],
    "cee": [
        (0.35, 0.38), (0.00, 0.47), (-0.38, 0.20), (-0.42, -0.10),
        (-0.05, -0.46), (0.38, -0.35),
    ],
    "double_u": [
        (-0.46, 0.45), (-0.35, 0.00), (-0.23, -0.44), (-0.12, -0.05),
        (0.00, 0.18), (0.12, -0.05), (0.23, -0.44), (0.35, 0.00),
        (0.46, 0.45),
    ],
    "en": [
        (-0.36, -0.45), (-0.37, 0.00), (-0.36, 0.45), (0.00, 0.00),
        (0.36, -0.45), (0.37, 0.00), (0.36, 0.45),
    ],
    "sine": [
        (-0.46, 0.00), (-0.30, 0.35), (-0.15, 0.00), (0.00, -0.35),
        (0.15, 0.00), (0.30, 0.35), (0.46, 0.00),
    ],
    "angle": [
        (-0.40, 0.45), (-0.20, 0.00), (0.00, -0.45), (0.20, 0.00),
        (0.40, 0.45),
    ],
}


def shape_names() -> list[str]:
    return sorted(_SHAPES)


def control_points(name: str) -> np.ndarray:
    """Return the (K, 2) control polyline of a template."""
    try:
        return np.asarray(_SHAPES[name], dtype=float)
    except KeyError:
        raise ConfigurationError(
            f"unknown shape {name!r}; available: {', '.join(shape_names())}"
        ) from None


def _spline_through(points: np.ndarray) -> CubicSpline:
    # Chord-length parameterization keeps the trace close to the polyline.
    deltas = np.linalg.norm(np.diff(points, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(deltas)])
    u /= u[-1]
    return CubicSpline(u, points, axis=0, bc_type="natural")


_EASE_DEPTH = 0.25  # pen decelerates to ~75% of cruise speed at stroke ends


def _ease(tau: np.ndarray, skew: float) -> np.ndarray:
    """Monotone [0,1] -> [0,1] timing, slower near both ends, never at rest."""
    tilted = tau + skew * tau * (1.0 - tau)
    return tilted - _EASE_DEPTH * np.sin(2.0 * np.pi * tilted) / (2.0 * np.pi)


def sample_shape(
    name: str,
    n_points: int,
    rng: np.random.Generator | None = None,
    start_jitter: float = 0.02,
    wiggle: float = 0.02,
    speed_skew: float = 0.08,
    path_noise: float = 0.008,
    sensor_noise: float = 0.0015,
) -> np.ndarray:
    """Trace one (possibly perturbed) instance of a template.

    Returns an (n_points, 2) array. With ``rng`` given, the start point and
    interior control points are jittered, a smooth low-frequency offset and a
    little per-sample sensor noise are layered on, and the timing profile is
    randomly skewed. The final point is kept exact in every variant so a set
    of traces shares one goal. Without ``rng`` the clean template is traced.
    """
    if n_points < 2:
        raise ConfigurationError("n_points must be >= 2")
    points = control_points(name)
    skew = 0.0
    if rng is not None:
        points = points.copy()
        points[0] += rng.normal(0.0, start_jitter, size=2)
        points[1:-1] += rng.normal(0.0, wiggle, size=points[1:-1].shape)
        skew = float(rng.uniform(-speed_skew, speed_skew))
    spline = _spline_through(points)
    tau = np.linspace(0.0, 1.0, n_points)
    u = _ease(tau, skew)
    trace = np.asarray(spline(u))
    if rng is not None:
        # Smooth per-trace drift, zero at the goal; keeps the corridor from
        # collapsing onto a one-dimensional manifold in input space.
        for k in (1, 2):
            amp = rng.normal(0.0, path_noise / k, size=2)
            trace += np.sin((k - 0.5) * np.pi * (1.0 - u))[:, None] * amp
        noise = rng.normal(0.0, sensor_noise, size=trace.shape)
        noise[-1] = 0.0
        trace += noise
    return trace
