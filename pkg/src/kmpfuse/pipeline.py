"""Training pipeline and the self-contained policy bundle it produces.

A bundle packs the fitted kernel model, the demonstrated goals, the fusion
parameters, and the training bounding box; it is everything a rollout or
field query needs. Serialization is plain JSON with factorizations rebuilt
on load, so re-training with identical seeds reproduces files byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .demonstrations import Dims, TrainingSet
from .errors import ConfigurationError
from .fusion import FusionParams, Goals, fusion_from_dict, fusion_to_dict
from .gmm import build_reference_set, fit_training_gmm
from .kmp import KmpHyperparams, KmpModel, kmp_fit, kmp_from_dict, kmp_to_dict

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class TrainSettings:
    """Everything the seeded pipeline needs besides the data."""

    components: int = 20
    n_refs: int = 500
    lam: float = 0.5
    l_c: float = 0.06
    l_p: float = 0.04
    jitter: float = 1e-8
    reg: float | None = None
    em_seed: int = 0
    sample_seed: int = 1


def kernel_lengths(dims: Dims, l_c: float, l_p: float) -> np.ndarray:
    """Expand the grouped scalar lengths to one value per input dimension."""
    if l_p <= 0 or (dims.context > 0 and l_c <= 0):
        raise ConfigurationError("kernel lengths must be positive")
    return np.concatenate([
        np.full(dims.context, float(l_c)),
        np.full(dims.position, float(l_p)),
    ])


@dataclass(frozen=True)
class PolicyBundle:
    kmp: KmpModel
    goals: Goals
    fusion: FusionParams
    train_bounds: np.ndarray   # (P, 2) tight demo bounding box
    provenance: dict

    @property
    def dims(self) -> Dims:
        return self.kmp.dims

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "kind": "policy-bundle",
            "kmp": kmp_to_dict(self.kmp),
            "goals": {
                "inputs": self.goals.inputs.tolist(),
                "positions": self.goals.positions.tolist(),
            },
            "fusion": fusion_to_dict(self.fusion),
            "train_bounds": np.asarray(self.train_bounds).tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicyBundle":
        if doc.get("kind") != "policy-bundle":
            raise ConfigurationError("not a serialized policy bundle")
        return cls(
            kmp=kmp_from_dict(doc["kmp"]),
            goals=Goals(
                inputs=np.asarray(doc["goals"]["inputs"], dtype=float),
                positions=np.asarray(doc["goals"]["positions"], dtype=float),
            ),
            fusion=fusion_from_dict(doc["fusion"]),
            train_bounds=np.asarray(doc["train_bounds"], dtype=float),
            provenance=dict(doc.get("provenance", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "PolicyBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def train_bundle(
    training: TrainingSet,
    settings: TrainSettings,
    fusion: FusionParams,
    timings: dict | None = None,
) -> PolicyBundle:
    """load -> EM -> reference sampling -> kernel fit, with stage timings."""
    stamps = {}

    t0 = time.perf_counter()
    mixture = fit_training_gmm(
        training.joint(), training.dims, settings.components,
        seed=settings.em_seed, reg=settings.reg,
    )
    stamps["gmm_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    refs = build_reference_set(mixture, settings.n_refs, seed=settings.sample_seed)
    stamps["references_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    hyper = KmpHyperparams(
        lam=settings.lam,
        lengths=kernel_lengths(training.dims, settings.l_c, settings.l_p),
        jitter=settings.jitter,
    )
    model = kmp_fit(refs, hyper)
    stamps["kmp_s"] = time.perf_counter() - t0

    if timings is not None:
        timings.update(stamps)
    provenance = {
        "components": settings.components,
        "n_refs": settings.n_refs,
        "em_seed": settings.em_seed,
        "sample_seed": settings.sample_seed,
        "em_iterations": len(mixture.log_likelihoods),
        "jitter_used": {"plain": model.jitter_plain, "reg": model.jitter_reg},
        "n_demos": training.n_demos,
        "n_samples": training.n_samples,
    }
    return PolicyBundle(
        kmp=model,
        goals=Goals.from_training_set(training),
        fusion=fusion,
        train_bounds=training.position_bounds(),
        provenance=provenance,
    )
