import numpy as np
import pytest

import kmpfuse as kf
from kmpfuse.demonstrations import Dims
from kmpfuse.gmm import ReferenceSet
from kmpfuse.kmp import KmpHyperparams, kmp_fit


@pytest.fixture(scope="session")
def zee_training():
    demos = kf.synthetic_handwriting_demos("zee", n_demos=7, n_points=100, seed=3)
    return kf.build_training_set(demos)


@pytest.fixture(scope="session")
def zee_bundle(zee_training):
    return kf.train_bundle(zee_training, kf.TrainSettings(), kf.FusionParams())


@pytest.fixture(scope="session")
def context_training():
    return kf.generate_context_letter_set(
        ("zee", "ess", "jay"),
        cluster_centers=[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]],
        cluster_std=0.02,
        demos_per_letter=3,
        seed=7,
    )


@pytest.fixture(scope="session")
def context_bundle(context_training):
    settings = kf.TrainSettings(components=35, n_refs=1000)
    return kf.train_bundle(context_training, settings, kf.FusionParams())


def random_reference_set(n_refs=12, i_dim=2, o_dim=2, seed=0, spread=1.0):
    """Small hand-rolled reference set exercising the pure kernel math."""
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-spread, spread, size=(n_refs, i_dim))
    means = rng.normal(0.0, 1.0, size=(n_refs, o_dim))
    covs = np.empty((n_refs, o_dim, o_dim))
    for i in range(n_refs):
        a = rng.normal(0.0, 0.3, size=(o_dim, o_dim))
        covs[i] = a @ a.T + 0.05 * np.eye(o_dim)
    return ReferenceSet(
        inputs=inputs, means=means, covariances=covs,
        dims=Dims(i_dim - o_dim, o_dim, i_dim, o_dim),
    )


@pytest.fixture(scope="session")
def small_model():
    refs = random_reference_set(n_refs=12, seed=5)
    return kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([0.6, 0.8])))
