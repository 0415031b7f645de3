import json

import numpy as np
import pytest

import kmpfuse as kf
from kmpfuse.demonstrations import (
    Demonstration,
    build_training_set,
    compute_velocities,
    corpus_from_dict,
    corpus_to_dict,
    load_training_set,
    save_corpus,
)
from kmpfuse.errors import (
    ConfigurationError,
    DataError,
    DimensionMismatchError,
    SchemaError,
)


def straight_demo(n=100, dt=0.05, slope=(1.0, -0.5)):
    t = np.arange(n)[:, None] * dt
    return Demonstration(id="line", dt=dt, positions=t * np.asarray(slope))


class TestDemonstration:
    def test_too_short(self):
        with pytest.raises(DataError):
            Demonstration(id="x", dt=0.05, positions=[[0.0, 0.0]])

    def test_nonfinite_rejected(self):
        with pytest.raises(DataError):
            Demonstration(id="x", dt=0.05, positions=[[0.0, 0.0], [np.nan, 1.0]])

    def test_context_length_must_match(self):
        with pytest.raises(DimensionMismatchError):
            Demonstration(
                id="x", dt=0.05,
                positions=[[0.0, 0.0], [1.0, 1.0]],
                contexts=[[0.5, 0.5]],
            )

    def test_arrays_are_read_only(self):
        demo = straight_demo()
        with pytest.raises(ValueError):
            demo.positions[0, 0] = 3.0


class TestComputeVelocities:
    def test_constant_slope(self):
        demo = Demonstration(id="x", dt=1.0, positions=[[0.0], [1.0], [2.0]])
        np.testing.assert_allclose(compute_velocities(demo), [[1.0], [1.0], [1.0]])

    def test_stationary(self):
        demo = Demonstration(id="x", dt=0.1, positions=np.ones((5, 2)))
        np.testing.assert_allclose(compute_velocities(demo), np.zeros((5, 2)))

    def test_quadratic_stencils(self):
        # Hand-evaluated central/one-sided differences on [0, 1, 4, 9], dt=0.5.
        demo = Demonstration(id="x", dt=0.5, positions=[[0.0], [1.0], [4.0], [9.0]])
        v = compute_velocities(demo)
        np.testing.assert_allclose(v[1:-1], [[4.0], [8.0]])
        np.testing.assert_allclose(v[0], [2.0])
        np.testing.assert_allclose(v[-1], [10.0])

    def test_euler_reconstruction_second_order(self):
        # Integrating the derived velocities re-walks a smooth polynomial
        # within the local truncation budget 10 * dt^2 * max|acc|.
        dt = 0.02
        t = np.arange(120) * dt
        pos = np.stack([0.3 * t**2 - 0.1 * t, 0.05 * t**3], axis=1)
        demo = Demonstration(id="poly", dt=dt, positions=pos)
        v = compute_velocities(demo)
        acc_max = np.abs(np.gradient(np.gradient(pos, dt, axis=0), dt, axis=0)).max()
        x = pos[0].copy()
        worst = 0.0
        for k in range(1, len(pos) - 1):
            x = x + dt * v[k - 1]
            worst = max(worst, np.abs(x - pos[k]).max() / k)
        assert worst <= 10.0 * dt**2 * max(acc_max, 1.0)


class TestCorpus:
    def make_corpus(self, tmp_path, demos):
        path = tmp_path / "corpus.json"
        save_corpus(path, demos)
        return path

    def test_load_counts(self, tmp_path):
        demos = [straight_demo(n=100), straight_demo(n=100)]
        ts = load_training_set(self.make_corpus(tmp_path, demos))
        assert ts.n_demos == 2
        assert ts.n_samples == 200
        assert tuple(ts.dims) == (0, 2, 2, 2)

    def test_mixed_context_presence_rejected(self):
        demos = [straight_demo(n=10)]
        doc = corpus_to_dict(demos)
        doc["dims"]["context"] = 1
        doc["demonstrations"][0]["contexts"] = None
        with pytest.raises(SchemaError):
            corpus_from_dict(doc)

    def test_mismatched_dims_across_demos(self):
        a = straight_demo(n=10)
        b = Demonstration(
            id="ctx", dt=0.05,
            positions=np.zeros((10, 2)) + np.arange(10)[:, None],
            contexts=np.ones((10, 1)),
        )
        with pytest.raises(DimensionMismatchError):
            build_training_set([a, b])

    def test_roundtrip_exact(self, tmp_path):
        ts = kf.generate_context_letter_set(
            ("zee", "ess", "jay"), [[0, 0], [1, 1], [2, 2]],
            cluster_std=0.1, demos_per_letter=1, seed=9, n_points=40,
        )
        path = self.make_corpus(tmp_path, ts.demonstrations)
        back = load_training_set(path)
        for d0, d1 in zip(ts.demonstrations, back.demonstrations):
            np.testing.assert_array_equal(d0.positions, d1.positions)
            np.testing.assert_array_equal(d0.contexts, d1.contexts)

    def test_schema_error_names_field(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 1, "dims": {"context": 0}}))
        with pytest.raises(SchemaError) as err:
            load_training_set(path)
        assert "dims.position" in str(err.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            load_training_set(tmp_path / "nope.json")

    def test_synthetic_handwriting_corpus(self, tmp_path):
        demos = kf.synthetic_handwriting_demos("zee", n_demos=7, seed=3)
        ts = load_training_set(self.make_corpus(tmp_path, demos))
        assert ts.n_demos == 7
        assert tuple(ts.dims) == (0, 2, 2, 2)

    def test_goal_is_final_sample(self, zee_training):
        for h, demo in enumerate(zee_training.demonstrations):
            np.testing.assert_array_equal(
                zee_training.goal_inputs[h], demo.inputs()[-1]
            )
            np.testing.assert_array_equal(
                zee_training.goal_positions[h], demo.positions[-1]
            )


class TestContextLetterSet:
    centers = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]

    def test_zero_std_contexts_exact(self):
        ts = kf.generate_context_letter_set(
            ("zee", "ess", "jay"), self.centers,
            cluster_std=0.0, demos_per_letter=2, seed=0, n_points=30,
        )
        for i, demo in enumerate(ts.demonstrations):
            np.testing.assert_array_equal(demo.contexts[0], self.centers[i // 2])
            assert (demo.contexts == demo.contexts[0]).all()

    def test_cluster_counts_and_dims(self):
        ts = kf.generate_context_letter_set(
            ("zee", "ess", "jay"), self.centers,
            cluster_std=0.1, demos_per_letter=3, seed=0, n_points=30,
        )
        assert ts.n_demos == 9
        assert tuple(ts.dims) == (2, 2, 4, 2)

    def test_deterministic_under_seed(self):
        kwargs = dict(
            cluster_std=0.1, demos_per_letter=2, seed=42, n_points=25,
        )
        a = kf.generate_context_letter_set(("zee", "ess", "jay"), self.centers, **kwargs)
        b = kf.generate_context_letter_set(("zee", "ess", "jay"), self.centers, **kwargs)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.outputs, b.outputs)

    def test_too_few_templates(self):
        with pytest.raises(ConfigurationError):
            kf.generate_context_letter_set(
                ("zee", "ess"), self.centers[:2],
                cluster_std=0.1, demos_per_letter=1, seed=0,
            )

    def test_duplicate_centers_rejected(self):
        with pytest.raises(ConfigurationError):
            kf.generate_context_letter_set(
                ("zee", "ess", "jay"), [[0, 0], [0, 0], [2, 2]],
                cluster_std=0.1, demos_per_letter=1, seed=0,
            )
