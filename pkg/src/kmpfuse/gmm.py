"""Gaussian mixture over the joint (input, output) space.

Fitting is plain EM with seeded k-means++ initialization; conditioning is
standard Gaussian mixture regression with moment-matched covariance. The
mixture's role here is to distill demonstrations into a compact set of
reference distributions that parameterize the kernel model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import logsumexp

from .demonstrations import Dims
from .errors import ConfigurationError, DataError, NumericalError

log = logging.getLogger(__name__)

EM_MAX_ITERS = 200
EM_REL_TOL = 1e-6

MODEL_VERSION = 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GmmModel:
    """Mixture weights/means/covariances over joint (s, xi) vectors."""

    weights: np.ndarray        # (K,)
    means: np.ndarray          # (K, D) with D = I + O
    covariances: np.ndarray    # (K, D, D)
    dims: Dims
    seed: int = 0
    log_likelihoods: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "means", _frozen(self.means))
        object.__setattr__(self, "covariances", _frozen(self.covariances))
        if abs(self.weights.sum() - 1.0) > 1e-12 or (self.weights < 0).any():
            raise NumericalError("mixture weights must be a simplex vector")
        sym_err = np.abs(self.covariances - np.swapaxes(self.covariances, 1, 2)).max()
        if sym_err > 1e-10:
            raise NumericalError(f"covariances asymmetric by {sym_err:g}")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def joint_dim(self) -> int:
        return self.means.shape[1]

    def log_pdf(self, data: np.ndarray) -> np.ndarray:
        """Mixture log-density at (Q, D) points."""
        return logsumexp(self._component_log_pdfs(np.atleast_2d(data)), axis=1)

    def input_marginal_log_pdf(self, s: np.ndarray) -> np.ndarray:
        """Log-density of the marginal mixture over inputs at (Q, I) points."""
        i_dim = self.dims.input
        marginal = GmmModel(
            weights=self.weights,
            means=self.means[:, :i_dim],
            covariances=self.covariances[:, :i_dim, :i_dim],
            dims=Dims(self.dims.context, self.dims.position, i_dim, 0),
            seed=self.seed,
        )
        return marginal.log_pdf(np.atleast_2d(s))

    def _component_log_pdfs(self, data: np.ndarray) -> np.ndarray:
        """(Q, K) matrix of log w_k + log N(x; mu_k, Sigma_k)."""
        q, d = data.shape
        out = np.empty((q, self.n_components))
        for k in range(self.n_components):
            out[:, k] = _gaussian_log_pdf(data, self.means[k], self.covariances[k])
        with np.errstate(divide="ignore"):
            out += np.log(self.weights)[None, :]
        return out


def _gaussian_log_pdf(data: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    d = mean.shape[0]
    try:
        chol = cho_factor(cov, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError(f"covariance not positive-definite: {exc}") from exc
    diff = (data - mean).T
    solved = cho_solve(chol, diff, check_finite=False)
    maha = np.sum(diff * solved, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    return -0.5 * (maha + logdet + d * np.log(2.0 * np.pi))


def _kmeanspp_centers(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers.append(data[rng.integers(n)])
            continue
        probs = d2 / total
        centers.append(data[rng.choice(n, p=probs)])
        d2 = np.minimum(d2, np.sum((data - centers[-1]) ** 2, axis=1))
    return np.vstack(centers)


def _regularizer(data: np.ndarray, reg: float | None) -> np.ndarray:
    if reg is None:
        # Scale-aware default keeps degenerate M-steps invertible.
        return 1e-6 * np.maximum(data.var(axis=0), 1e-12)
    if reg < 0:
        raise ConfigurationError("reg must be >= 0")
    return np.full(data.shape[1], float(reg))


def em_fit(
    data: np.ndarray,
    components: int,
    seed: int = 0,
    reg: float | None = None,
) -> GmmModel:
    """Fit a GMM to joint (input, output) rows by expectation maximization.

    ``data`` is (n, I+O); pass ``TrainingSet.joint()``. ``dims`` metadata is
    attached by the caller via :func:`fit_training_gmm` when available.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError("em_fit needs a non-empty (n, D) sample matrix")
    if not np.isfinite(data).all():
        raise DataError("em_fit: non-finite samples")
    n, d = data.shape
    if components < 1:
        raise ConfigurationError("components must be >= 1")
    if n < components:
        raise DataError(f"{n} samples cannot support {components} components")

    rng = np.random.default_rng(seed)
    reg_diag = np.diag(_regularizer(data, reg))

    # Hard k-means++ assignment bootstraps the responsibilities.
    centers = _kmeanspp_centers(data, components, rng)
    assign = np.argmin(
        ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    resp = np.zeros((n, components))
    resp[np.arange(n), assign] = 1.0

    weights = np.empty(components)
    means = np.empty((components, d))
    covs = np.empty((components, d, d))
    lls: list[float] = []
    sample_ll = np.zeros(n)

    for iteration in range(EM_MAX_ITERS):
        # M-step
        mass = resp.sum(axis=0)
        collapsed = np.flatnonzero(mass < 1e-10)
        for k in collapsed:
            # Re-seed a dying component at the worst-explained sample.
            worst = int(np.argmin(sample_ll)) if iteration > 0 else int(rng.integers(n))
            log.warning("component %d collapsed; re-seeding at sample %d", k, worst)
            resp[:, k] = 0.0
            resp[worst, :] = 0.0
            resp[worst, k] = 1.0
            mass = resp.sum(axis=0)
        weights = mass / n
        means = (resp.T @ data) / mass[:, None]
        for k in range(components):
            diff = data - means[k]
            cov = (resp[:, k][:, None] * diff).T @ diff / mass[k]
            cov = 0.5 * (cov + cov.T) + reg_diag
            covs[k] = cov

        # E-step
        model = GmmModel(
            weights=weights, means=means, covariances=covs,
            dims=Dims(0, 0, d, 0), seed=seed,
        )
        log_resp = model._component_log_pdfs(data)
        sample_ll = logsumexp(log_resp, axis=1)
        resp = np.exp(log_resp - sample_ll[:, None])
        ll = float(sample_ll.sum())
        lls.append(ll)
        if iteration > 0:
            prev = lls[-2]
            if (ll - prev) < EM_REL_TOL * max(1.0, abs(prev)):
                break

    return GmmModel(
        weights=weights, means=means, covariances=covs,
        dims=Dims(0, 0, d, 0), seed=seed, log_likelihoods=tuple(lls),
    )


def fit_training_gmm(
    joint: np.ndarray, dims: Dims, components: int, seed: int = 0, reg: float | None = None
) -> GmmModel:
    """em_fit plus the (I, O) split recorded for conditioning."""
    fitted = em_fit(joint, components, seed=seed, reg=reg)
    return GmmModel(
        weights=fitted.weights,
        means=fitted.means,
        covariances=fitted.covariances,
        dims=dims,
        seed=seed,
        log_likelihoods=fitted.log_likelihoods,
    )


# ---------------------------------------------------------------------------
# Gaussian mixture regression


def gmr_condition_batch(model: GmmModel, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Condition the mixture on inputs, (Q, I) -> means (Q, O), covs (Q, O, O).

    Responsibilities that underflow to zero everywhere (queries far outside
    the support) fall back to uniform weights over components.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    if not np.isfinite(s).all():
        raise DataError("gmr query contains non-finite values")
    i_dim, o_dim = model.dims.input, model.dims.output
    if s.shape[1] != i_dim:
        raise DataError(f"gmr query dim {s.shape[1]} != input dim {i_dim}")
    k_comp, q = model.n_components, s.shape[0]

    log_h = np.empty((q, k_comp))
    cond_means = np.empty((k_comp, q, o_dim))
    cond_covs = np.empty((k_comp, o_dim, o_dim))
    for k in range(k_comp):
        mu_s = model.means[k, :i_dim]
        mu_o = model.means[k, i_dim:]
        cov = model.covariances[k]
        cov_ss = cov[:i_dim, :i_dim]
        cov_so = cov[:i_dim, i_dim:]
        cov_oo = cov[i_dim:, i_dim:]
        chol = cho_factor(cov_ss, lower=True, check_finite=False)
        gain = cho_solve(chol, cov_so, check_finite=False)   # (I, O) = Sss^-1 Sso
        cond_means[k] = mu_o + (s - mu_s) @ gain
        cc = cov_oo - cov_so.T @ gain
        cond_covs[k] = 0.5 * (cc + cc.T)
        log_h[:, k] = _gaussian_log_pdf(s, mu_s, cov_ss)
    with np.errstate(divide="ignore"):
        log_h += np.log(model.weights)[None, :]

    norm = logsumexp(log_h, axis=1)
    dead = ~np.isfinite(norm)
    h = np.exp(log_h - np.where(dead, 0.0, norm)[:, None])
    if dead.any():
        h[dead] = 1.0 / k_comp

    means = np.einsum("qk,kqo->qo", h, cond_means)
    spread = cond_means - means[None, :, :]             # (K, Q, O)
    covs = np.einsum("qk,kij->qij", h, cond_covs)
    covs += np.einsum("qk,kqi,kqj->qij", h, spread, spread)
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    return means, covs


def gmr_condition(model: GmmModel, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and moment-matched covariance at a single input."""
    means, covs = gmr_condition_batch(model, np.asarray(s, dtype=float)[None, :])
    return means[0], covs[0]


# ---------------------------------------------------------------------------
# Reference set


@dataclass(frozen=True)
class ReferenceSet:
    """The N conditioned reference distributions that parameterize a KMP."""

    inputs: np.ndarray        # (N, I)
    means: np.ndarray         # (N, O)
    covariances: np.ndarray   # (N, O, O)
    dims: Dims

    def __post_init__(self):
        for name in ("inputs", "means", "covariances"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n = self.inputs.shape[0]
        if self.means.shape[0] != n or self.covariances.shape[0] != n:
            raise DataError("reference arrays must have equal length")
        sym = np.abs(self.covariances - np.swapaxes(self.covariances, 1, 2)).max()
        if sym > 1e-9:
            raise NumericalError(f"reference covariances asymmetric by {sym:g}")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def build_reference_set(model: GmmModel, n_refs: int, seed: int = 0) -> ReferenceSet:
    """Sample N inputs from the marginal mixture over s and condition each."""
    if n_refs < 1:
        raise ConfigurationError("n_refs must be >= 1")
    i_dim = model.dims.input
    rng = np.random.default_rng(seed)
    comp = rng.choice(model.n_components, size=n_refs, p=model.weights)
    inputs = np.empty((n_refs, i_dim))
    for k in range(model.n_components):
        rows = np.flatnonzero(comp == k)
        if rows.size == 0:
            continue
        cov_ss = model.covariances[k, :i_dim, :i_dim]
        chol = np.linalg.cholesky(cov_ss)
        z = rng.standard_normal((rows.size, i_dim))
        inputs[rows] = model.means[k, :i_dim] + z @ chol.T
    means, covs = gmr_condition_batch(model, inputs)
    return ReferenceSet(inputs=inputs, means=means, covariances=covs, dims=model.dims)


# ---------------------------------------------------------------------------
# Serialization


def gmm_to_dict(model: GmmModel) -> dict:
    return {
        "version": MODEL_VERSION,
        "kind": "gmm",
        "seed": model.seed,
        "dims": list(model.dims),
        "weights": model.weights.tolist(),
        "means": model.means.tolist(),
        "covariances": model.covariances.tolist(),
    }


def gmm_from_dict(doc: dict) -> GmmModel:
    if doc.get("version") != MODEL_VERSION or doc.get("kind") != "gmm":
        raise DataError("not a serialized gmm document")
    return GmmModel(
        weights=np.asarray(doc["weights"], dtype=float),
        means=np.asarray(doc["means"], dtype=float),
        covariances=np.asarray(doc["covariances"], dtype=float),
        dims=Dims(*doc["dims"]),
        seed=int(doc["seed"]),
    )


def save_gmm(path: str | Path, model: GmmModel) -> None:
    Path(path).write_text(json.dumps(gmm_to_dict(model), sort_keys=True))


def load_gmm(path: str | Path) -> GmmModel:
    return gmm_from_dict(json.loads(Path(path).read_text()))
