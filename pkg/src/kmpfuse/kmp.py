"""Kernelized velocity primitive: fitting, prediction, uncertainty split.

Given N reference distributions (s_n, mu_n, Sigma_n) and an RBF kernel with
per-dimension lengths l, the model predicts at a query s*:

    mean        k* (K + lam S)^-1 mu_stacked
    covariance  (N / lam) (k** - k* (K + lam S)^-1 k*^T)

with K the block kernel matrix (k(s_i, s_j) I_O), S the block-diagonal of the
reference covariances, and k** = 1 for the RBF kernel. The covariance splits
into an isotropic epistemic scalar

    sigma_ep = k** - k_s (K_s + jitter I)^-1 k_s^T      (in [0, 1])

plus an aleatoric remainder, evaluated through the identity
aleatoric = (lam / N) covariance - sigma_ep I, which avoids factorizing the
third matrix K + K (lam S)^-1 K. The epistemic gradient

    grad sigma_ep = 2 sum_n c_n k_n (s* - s_n) / l^2,   c = (K_s + jitter I)^-1 k_s^T

drives the stabilizing policy.

All solves against the scalar kernel matrix exploit that the block K is
K_s (x) I_O, so an N x N factorization serves every output dimension. The
regularized system keeps its full NO x NO factorization because the
block-diagonal S couples output dimensions within each reference.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.spatial.distance import cdist

from .demonstrations import Dims
from .errors import ConditioningError, ConfigurationError, DataError
from .gmm import ReferenceSet

log = logging.getLogger(__name__)

MODEL_VERSION = 1
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class KmpHyperparams:
    """Regularizer, per-input-dimension kernel lengths, and base jitter."""

    lam: float
    lengths: np.ndarray   # (I,), positive
    jitter: float = 1e-8

    def __post_init__(self):
        lengths = np.atleast_1d(np.asarray(self.lengths, dtype=float))
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigurationError("lambda must be > 0")
        if (lengths <= 0).any() or not np.isfinite(lengths).all():
            raise ConfigurationError("kernel lengths must be positive")
        if self.jitter < 0:
            raise ConfigurationError("jitter must be >= 0")


def rbf_kernel(a: np.ndarray, b: np.ndarray, lengths: np.ndarray) -> float:
    """exp(-1/2 (a-b)^T diag(l)^-2 (a-b)); equals 1 at zero distance."""
    diff = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / lengths
    return float(np.exp(-0.5 * np.dot(diff, diff)))


def kernel_matrix(a: np.ndarray, b: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Pairwise RBF kernel values, (n, m)."""
    a = np.atleast_2d(a) / lengths
    b = np.atleast_2d(b) / lengths
    return np.exp(-0.5 * cdist(a, b, "sqeuclidean"))


def _chol_escalating(matrix: np.ndarray, base_jitter: float, name: str):
    """Cholesky with a x10 jitter ladder up to MAX_JITTER; returns (factor, jitter)."""
    n = matrix.shape[0]
    jitter = base_jitter
    while True:
        try:
            shifted = matrix if jitter == 0 else matrix + jitter * np.eye(n)
            factor = cho_factor(shifted, lower=True, check_finite=False)
            if jitter != base_jitter:
                log.warning("%s needed jitter escalation to %g", name, jitter)
            return factor, jitter
        except LinAlgError:
            if jitter >= MAX_JITTER:
                raise ConditioningError(name, jitter) from None
            jitter = 1e-8 if jitter == 0 else min(jitter * 10.0, MAX_JITTER)


@dataclass(frozen=True)
class KmpModel:
    """Fitted kernel model; immutable, queries are reentrant."""

    refs: ReferenceSet
    hyper: KmpHyperparams
    jitter_plain: float       # final jitter on K_s
    jitter_reg: float         # final jitter on K + lam S
    _chol_plain: tuple        # factor of (K_s + jitter I), N x N
    _chol_reg: tuple          # factor of (K + lam S), NO x NO
    _alpha: np.ndarray        # (N, O): (K + lam S)^-1 mu_stacked, reshaped
    _stacked_mu: np.ndarray   # (N * O,)

    @property
    def n_refs(self) -> int:
        return self.refs.size

    @property
    def dims(self) -> Dims:
        return self.refs.dims

    def kernel_row(self, s_star: np.ndarray) -> np.ndarray:
        return kernel_matrix(s_star[None, :], self.refs.inputs, self.hyper.lengths)[0]

    def _check_query(self, s_star) -> np.ndarray:
        s_star = np.asarray(s_star, dtype=float).reshape(-1)
        if s_star.shape[0] != self.dims.input:
            raise DataError(
                f"query dim {s_star.shape[0]} != input dim {self.dims.input}"
            )
        if not np.isfinite(s_star).all():
            raise DataError("query contains non-finite values")
        return s_star


@dataclass(frozen=True)
class Prediction:
    """Mean, covariance, and the epistemic/aleatoric split at one query."""

    mean: np.ndarray         # (O,)
    covariance: np.ndarray   # (O, O), Eq-scaled by N / lambda
    epistemic: float         # isotropic scalar in [0, 1]
    aleatoric: np.ndarray    # (O, O), unscaled remainder


def kmp_fit(refs: ReferenceSet, hyper: KmpHyperparams) -> KmpModel:
    """Build and factorize the kernel systems for a reference set."""
    n, o = refs.size, refs.dims.output
    if hyper.lengths.shape[0] != refs.dims.input:
        raise ConfigurationError(
            f"{hyper.lengths.shape[0]} kernel lengths for input dim {refs.dims.input}"
        )
    k_s = kernel_matrix(refs.inputs, refs.inputs, hyper.lengths)
    chol_plain, jitter_plain = _chol_escalating(k_s, hyper.jitter, "K")

    k_block = np.kron(k_s, np.eye(o))
    reg = np.zeros((n * o, n * o))
    for i in range(n):
        reg[i * o:(i + 1) * o, i * o:(i + 1) * o] = refs.covariances[i]
    system = k_block + hyper.lam * reg
    chol_reg, jitter_reg = _chol_escalating(system, 0.0, "K + lambda*Sigma")

    stacked_mu = refs.means.reshape(-1)
    alpha = cho_solve(chol_reg, stacked_mu, check_finite=False).reshape(n, o)
    return KmpModel(
        refs=refs,
        hyper=hyper,
        jitter_plain=jitter_plain,
        jitter_reg=jitter_reg,
        _chol_plain=chol_plain,
        _chol_reg=chol_reg,
        _alpha=alpha,
        _stacked_mu=stacked_mu,
    )


def predict_mean(model: KmpModel, s_star: np.ndarray) -> np.ndarray:
    """Mean only; the cheap path used inside control loops."""
    s_star = model._check_query(s_star)
    return model.kernel_row(s_star) @ model._alpha


def kmp_predict(model: KmpModel, s_star: np.ndarray) -> Prediction:
    s_star = model._check_query(s_star)
    o = model.dims.output
    k_s = model.kernel_row(s_star)

    mean = k_s @ model._alpha

    k_block_star = np.kron(k_s[None, :], np.eye(o))        # (O, N*O)
    solved = cho_solve(model._chol_reg, k_block_star.T, check_finite=False)
    cov_unscaled = np.eye(o) - k_block_star @ solved       # k** = 1 for RBF
    cov_unscaled = 0.5 * (cov_unscaled + cov_unscaled.T)
    covariance = (model.n_refs / model.hyper.lam) * cov_unscaled

    sigma_ep = epistemic(model, s_star)
    aleatoric = cov_unscaled - sigma_ep * np.eye(o)
    return Prediction(
        mean=mean, covariance=covariance, epistemic=sigma_ep, aleatoric=aleatoric
    )


def epistemic(model: KmpModel, s_star: np.ndarray) -> float:
    """Scalar epistemic uncertainty k** - k_s (K_s + jitter I)^-1 k_s^T."""
    s_star = model._check_query(s_star)
    k_s = model.kernel_row(s_star)
    c = cho_solve(model._chol_plain, k_s, check_finite=False)
    return float(1.0 - k_s @ c)


def epistemic_gradient(model: KmpModel, s_star: np.ndarray) -> np.ndarray:
    """Gradient of the scalar epistemic uncertainty with respect to s*."""
    return epistemic_with_gradient(model, s_star)[1]


def epistemic_with_gradient(model: KmpModel, s_star: np.ndarray) -> tuple[float, np.ndarray]:
    """(sigma_ep, grad sigma_ep) sharing one kernel row and one solve."""
    s_star = model._check_query(s_star)
    k_s = model.kernel_row(s_star)
    c = cho_solve(model._chol_plain, k_s, check_finite=False)
    sigma_ep = float(1.0 - k_s @ c)
    w = k_s * c
    diff = s_star[None, :] - model.refs.inputs
    grad = 2.0 * (w @ diff) / model.hyper.lengths**2
    return sigma_ep, grad


def aleatoric_direct(model: KmpModel, s_star: np.ndarray) -> np.ndarray:
    """Brute-force triple-product aleatoric term; test oracle for small N only.

    Evaluates k* (K + K (lam S)^-1 K)^-1 k*^T with dense block matrices. Uses
    the same jittered K as the epistemic term so the comparison is exact.
    """
    s_star = model._check_query(s_star)
    n, o = model.n_refs, model.dims.output
    k_s = kernel_matrix(model.refs.inputs, model.refs.inputs, model.hyper.lengths)
    k_big = np.kron(k_s, np.eye(o)) + model.jitter_plain * np.eye(n * o)
    sig = np.zeros((n * o, n * o))
    for i in range(n):
        sig[i * o:(i + 1) * o, i * o:(i + 1) * o] = model.refs.covariances[i]
    inner = k_big + k_big @ np.linalg.solve(model.hyper.lam * sig, k_big)
    k_star = np.kron(model.kernel_row(s_star)[None, :], np.eye(o))
    out = k_star @ np.linalg.solve(inner, k_star.T)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# Serialization (factorizations are rebuilt on load)


def kmp_to_dict(model: KmpModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": "kmp",
        "hyper": {
            "lambda": model.hyper.lam,
            "lengths": model.hyper.lengths.tolist(),
            "jitter": model.hyper.jitter,
        },
        "jitter_used": {"plain": model.jitter_plain, "reg": model.jitter_reg},
        "references": {
            "dims": list(model.dims),
            "inputs": model.refs.inputs.tolist(),
            "means": model.refs.means.tolist(),
            "covariances": model.refs.covariances.tolist(),
        },
    }


def kmp_from_dict(doc: dict) -> KmpModel:
    if doc.get("version") != MODEL_VERSION or doc.get("kind") != "kmp":
        raise DataError("not a serialized kmp document")
    refs_doc = doc["references"]
    refs = ReferenceSet(
        inputs=np.asarray(refs_doc["inputs"], dtype=float),
        means=np.asarray(refs_doc["means"], dtype=float),
        covariances=np.asarray(refs_doc["covariances"], dtype=float),
        dims=Dims(*refs_doc["dims"]),
    )
    hyper_doc = doc["hyper"]
    hyper = KmpHyperparams(
        lam=float(hyper_doc["lambda"]),
        lengths=np.asarray(hyper_doc["lengths"], dtype=float),
        jitter=float(hyper_doc["jitter"]),
    )
    return kmp_fit(refs, hyper)


def save_kmp(path: str | Path, model: KmpModel) -> None:
    Path(path).write_text(json.dumps(kmp_to_dict(model), sort_keys=True))


def load_kmp(path: str | Path) -> KmpModel:
    return kmp_from_dict(json.loads(Path(path).read_text()))
