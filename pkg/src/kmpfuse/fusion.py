"""The three expert policies and their mixture.

Experts:
  * learned velocity field (the kernel model's mean prediction),
  * stabilizer descending the epistemic-uncertainty surface,
  * linear attractor toward the nearest demonstrated goal.

They blend as a mixture of experts. The stabilizer's coefficient pi_sp is a
constant; the goal coefficient follows the maximum kernel activation k_max
over the demonstrated goal inputs, pi_g = (1 - pi_sp) k_max; the remainder
pi_kmp = (1 - pi_sp)(1 - k_max) goes to the learned field, so the three
always sum to one.

Gains are interpreted as velocities normalized by the ``dt`` stored in
FusionParams: mu_sp = -K_sp * g / dt and mu_g = K_g (x_g - x*) / dt. This
``dt`` is a gain timescale, deliberately decoupled from the control loop's
integration step (see RolloutConfig); the 10 s default makes the published
gain values produce workspace-scale velocities on unit-normalized data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demonstrations import TrainingSet
from .errors import ConfigurationError, DataError
from .kmp import KmpModel, epistemic_with_gradient, kernel_matrix, kmp_predict, predict_mean


@dataclass(frozen=True)
class FusionParams:
    """Mixture gains and thresholds (serialized under their published names)."""

    pi_sp: float = 0.6          # constant stabilizer coefficient
    k_sp: float = 4.0           # stabilizer gain (K_s)
    k_g: float = 20.0           # goal attractor gain (K_g)
    gamma_sigma: float = 0.5    # uncertainty threshold for gradient normalization
    gamma_grad: float = 1.0     # gradient-norm threshold for normalization
    dt: float = 10.0            # gain normalization timescale, seconds
    grad_eps: float = 1e-250    # below this norm the normalized branch yields zero
    sigma_sp2: float = 1e-4     # isotropic expert covariance, stabilizer
    sigma_g2: float = 1e-4      # isotropic expert covariance, goal attractor

    def __post_init__(self):
        if not (0.0 <= self.pi_sp < 1.0):
            raise ConfigurationError("pi_sp must lie in [0, 1)")
        for name in ("k_sp", "k_g", "gamma_sigma", "gamma_grad", "dt", "grad_eps"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.sigma_sp2 < 0 or self.sigma_g2 < 0:
            raise ConfigurationError("expert covariances must be >= 0")


@dataclass(frozen=True)
class Goals:
    """Demonstrated final inputs/positions; the attractor targets."""

    inputs: np.ndarray      # (H, I)
    positions: np.ndarray   # (H, P)

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if inputs.shape[0] != positions.shape[0]:
            raise DataError("goal inputs and positions must pair up")
        if inputs.shape[0] == 0:
            raise ConfigurationError("at least one goal required")
        inputs.setflags(write=False)
        positions.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def from_training_set(cls, ts: TrainingSet) -> "Goals":
        return cls(inputs=ts.goal_inputs, positions=ts.goal_positions)

    @property
    def count(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class MixingCoefficients:
    pi_kmp: float
    pi_sp: float
    pi_g: float
    k_max: float
    goal_index: int

    def as_array(self) -> np.ndarray:
        return np.array([self.pi_kmp, self.pi_sp, self.pi_g])


def mixing_coefficients(
    s_star: np.ndarray,
    goal_inputs: np.ndarray,
    lengths: np.ndarray,
    pi_sp: float,
) -> MixingCoefficients:
    """Coefficient design: k_max over the goal inputs splits 1 - pi_sp.

    The activation is computed on the full input (context included), so a
    mismatched context correctly weakens goal attraction. Ties resolve to the
    lowest goal index.
    """
    goal_inputs = np.atleast_2d(goal_inputs)
    if goal_inputs.shape[0] == 0:
        raise ConfigurationError("empty goal set")
    s_star = np.asarray(s_star, dtype=float).reshape(-1)
    activations = kernel_matrix(s_star[None, :], goal_inputs, lengths)[0]
    goal_index = int(np.argmax(activations))
    k_max = float(activations[goal_index])
    return MixingCoefficients(
        pi_kmp=(1.0 - pi_sp) * (1.0 - k_max),
        pi_sp=pi_sp,
        pi_g=(1.0 - pi_sp) * k_max,
        k_max=k_max,
        goal_index=goal_index,
    )


def normalized_position_gradient(
    sigma_ep: float,
    grad: np.ndarray,
    position_lengths: np.ndarray,
    params: FusionParams,
) -> np.ndarray:
    """Threshold rule on the position block of the uncertainty gradient.

    The gradient is expressed in kernel-length units (componentwise product
    with the position kernel lengths), which makes it dimensionless with
    magnitude O(1) at the edge of the data support; the published threshold
    gamma_grad = 1 sits exactly at that transition. The raw gradient passes
    through only while both the uncertainty and the gradient norm sit below
    their thresholds; otherwise it is scaled to unit norm (or zeroed when
    numerically vanished).
    """
    p = position_lengths.shape[0]
    grad_x = grad[-p:] * position_lengths
    scale = float(np.abs(grad_x).max()) if p else 0.0
    if scale < params.grad_eps:
        # Far plateau: nothing to normalize against.
        if sigma_ep < params.gamma_sigma:
            return grad_x
        return np.zeros(p)
    # Pre-scaling keeps the norm exact even when components are subnormal.
    scaled = grad_x / scale
    norm = float(np.linalg.norm(scaled))
    if sigma_ep < params.gamma_sigma and norm * scale < params.gamma_grad:
        return grad_x
    return scaled / norm


def stabilizing_from_gradient(
    sigma_ep: float,
    grad: np.ndarray,
    position_lengths: np.ndarray,
    params: FusionParams,
) -> np.ndarray:
    """mu_sp = -K_sp * thresholded-gradient / dt."""
    tilde = normalized_position_gradient(sigma_ep, grad, position_lengths, params)
    return -params.k_sp * tilde / params.dt


def position_lengths(model: KmpModel) -> np.ndarray:
    """Kernel lengths of the position block (the trailing O input dims)."""
    return model.hyper.lengths[-model.dims.output:]


def stabilizing_velocity(
    model: KmpModel, s_star: np.ndarray, params: FusionParams
) -> np.ndarray:
    """Velocity descending the epistemic uncertainty at s*."""
    sigma_ep, grad = epistemic_with_gradient(model, s_star)
    return stabilizing_from_gradient(sigma_ep, grad, position_lengths(model), params)


def goal_velocity(
    x_star: np.ndarray,
    goal_positions: np.ndarray,
    goal_index: int,
    params: FusionParams,
) -> np.ndarray:
    """Linear feedback toward the selected goal, mu_g = K_g (x_g - x*) / dt."""
    goal_positions = np.atleast_2d(goal_positions)
    if not (0 <= goal_index < goal_positions.shape[0]):
        raise IndexError(f"goal index {goal_index} outside 0..{goal_positions.shape[0] - 1}")
    return params.k_g * (goal_positions[goal_index] - np.asarray(x_star, dtype=float)) / params.dt


def moe_covariance(
    pis: np.ndarray, means: np.ndarray, covariances: np.ndarray
) -> np.ndarray:
    """Moment-matched mixture covariance: sum pi (S_i + m_i m_i^T) - m m^T."""
    mean = pis @ means
    cov = np.einsum("i,ijk->jk", pis, covariances)
    cov += np.einsum("i,ij,ik->jk", pis, means, means)
    cov -= np.outer(mean, mean)
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class FusedAction:
    """The blended command plus everything needed to replay the blend."""

    mean: np.ndarray               # (O,)
    covariance: np.ndarray | None  # (O, O), diagnostic only
    coefficients: MixingCoefficients
    expert_means: np.ndarray       # (3, O): learned field, stabilizer, goal
    epistemic: float


def fused_action(
    model: KmpModel,
    s_star: np.ndarray,
    goals: Goals,
    params: FusionParams,
    with_covariance: bool = True,
) -> FusedAction:
    """Blend the three experts at s* (the full mixture)."""
    s_star = np.asarray(s_star, dtype=float).reshape(-1)
    o = model.dims.output
    coeff = mixing_coefficients(s_star, goals.inputs, model.hyper.lengths, params.pi_sp)
    sigma_ep, grad = epistemic_with_gradient(model, s_star)
    mu_sp = stabilizing_from_gradient(sigma_ep, grad, position_lengths(model), params)
    mu_g = goal_velocity(s_star[-o:], goals.positions, coeff.goal_index, params)

    covariance = None
    if with_covariance:
        pred = kmp_predict(model, s_star)
        mu_kmp = pred.mean
        expert_covs = np.stack([
            pred.covariance,
            params.sigma_sp2 * np.eye(o),
            params.sigma_g2 * np.eye(o),
        ])
        experts = np.stack([mu_kmp, mu_sp, mu_g])
        covariance = moe_covariance(coeff.as_array(), experts, expert_covs)
    else:
        mu_kmp = predict_mean(model, s_star)
        experts = np.stack([mu_kmp, mu_sp, mu_g])

    mean = coeff.pi_kmp * experts[0] + coeff.pi_sp * experts[1] + coeff.pi_g * experts[2]
    return FusedAction(
        mean=mean,
        covariance=covariance,
        coefficients=coeff,
        expert_means=experts,
        epistemic=sigma_ep,
    )


def fusion_to_dict(params: FusionParams) -> dict:
    """Serialize under the published hyperparameter names."""
    return {
        "pi_sp": params.pi_sp,
        "K_s": params.k_sp,
        "K_g": params.k_g,
        "gamma_sigma": params.gamma_sigma,
        "gamma_grad": params.gamma_grad,
        "dt": params.dt,
        "grad_eps": params.grad_eps,
        "sigma_sp2": params.sigma_sp2,
        "sigma_g2": params.sigma_g2,
    }


def fusion_from_dict(doc: dict) -> FusionParams:
    return FusionParams(
        pi_sp=float(doc.get("pi_sp", 0.6)),
        k_sp=float(doc.get("K_s", 4.0)),
        k_g=float(doc.get("K_g", 20.0)),
        gamma_sigma=float(doc.get("gamma_sigma", 0.5)),
        gamma_grad=float(doc.get("gamma_grad", 1.0)),
        dt=float(doc.get("dt", 10.0)),
        grad_eps=float(doc.get("grad_eps", 1e-250)),
        sigma_sp2=float(doc.get("sigma_sp2", 1e-4)),
        sigma_g2=float(doc.get("sigma_g2", 1e-4)),
    )
