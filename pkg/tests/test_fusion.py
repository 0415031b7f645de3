import numpy as np
import pytest
from scipy.optimize import brentq

from kmpfuse.demonstrations import Dims
from kmpfuse.errors import ConfigurationError
from kmpfuse.fusion import (
    FusionParams,
    fused_action,
    fusion_from_dict,
    fusion_to_dict,
    goal_velocity,
    mixing_coefficients,
    moe_covariance,
    position_lengths,
    stabilizing_velocity,
)
from kmpfuse.gmm import ReferenceSet
from kmpfuse.kmp import (
    KmpHyperparams,
    epistemic,
    epistemic_with_gradient,
    kmp_fit,
)

TABLE_PARAMS = FusionParams(pi_sp=0.6, k_sp=4.0, k_g=20.0, gamma_sigma=0.5,
                            gamma_grad=1.0, dt=0.05)


class TestParams:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            FusionParams(pi_sp=1.0)
        with pytest.raises(ConfigurationError):
            FusionParams(k_sp=0.0)
        with pytest.raises(ConfigurationError):
            FusionParams(dt=-1.0)

    def test_serialization_uses_published_names(self):
        doc = fusion_to_dict(TABLE_PARAMS)
        assert doc["K_s"] == 4.0 and doc["K_g"] == 20.0 and doc["pi_sp"] == 0.6
        back = fusion_from_dict(doc)
        assert back == TABLE_PARAMS


class TestMixingCoefficients:
    def test_at_goal(self, zee_bundle):
        # All demonstrations of one shape share the final pose exactly, so
        # querying at it activates every goal; ties resolve to index 0.
        goals = zee_bundle.goals
        coeff = mixing_coefficients(
            goals.inputs[2], goals.inputs, zee_bundle.kmp.hyper.lengths, pi_sp=0.6
        )
        assert coeff.k_max == 1.0
        assert coeff.pi_g == pytest.approx(0.4, abs=1e-15)
        assert coeff.pi_kmp == 0.0
        assert coeff.goal_index == 0

    def test_goal_index_picks_nearest(self):
        goals = np.array([[0.0, 0.0], [1.0, 1.0]])
        coeff = mixing_coefficients(
            np.array([0.9, 0.9]), goals, np.array([0.3, 0.3]), pi_sp=0.6
        )
        assert coeff.goal_index == 1

    def test_far_from_goals(self, zee_bundle):
        goals = zee_bundle.goals
        coeff = mixing_coefficients(
            np.array([30.0, 30.0]), goals.inputs, zee_bundle.kmp.hyper.lengths, pi_sp=0.6
        )
        assert coeff.pi_g <= 1e-12
        assert coeff.pi_kmp == pytest.approx(0.4, abs=1e-12)

    def test_tie_breaks_to_lowest_index(self):
        goals = np.array([[1.0, 1.0], [1.0, 1.0]])
        coeff = mixing_coefficients(
            np.array([0.0, 0.0]), goals, np.array([1.0, 1.0]), pi_sp=0.3
        )
        assert coeff.goal_index == 0

    def test_empty_goals(self):
        with pytest.raises(ConfigurationError):
            mixing_coefficients(np.zeros(2), np.zeros((0, 2)), np.ones(2), 0.5)

    def test_simplex_property(self, zee_bundle):
        rng = np.random.default_rng(2)
        lengths = zee_bundle.kmp.hyper.lengths
        for _ in range(1000):
            s = rng.uniform(-2, 2, size=2)
            pi_sp = rng.uniform(0.0, 0.999)
            c = mixing_coefficients(s, zee_bundle.goals.inputs, lengths, pi_sp)
            total = c.pi_kmp + c.pi_sp + c.pi_g
            assert abs(total - 1.0) <= 1e-12
            assert c.pi_kmp >= 0 and c.pi_sp >= 0 and c.pi_g >= 0


class TestStabilizingVelocity:
    def test_vanishes_on_data(self, small_model):
        # Reference inputs are interpolation points: gradient ~ 0 there.
        v = stabilizing_velocity(small_model, small_model.refs.inputs[3], TABLE_PARAMS)
        assert np.linalg.norm(v) <= 1e-4

    def test_far_query_hits_velocity_cap(self, small_model):
        # sigma_ep ~ 1 > gamma_sigma forces the normalized branch.
        s = small_model.refs.inputs.mean(axis=0) + np.array([4.0, 4.0])
        assert epistemic(small_model, s) > 0.9
        v = stabilizing_velocity(small_model, s, TABLE_PARAMS)
        assert np.linalg.norm(v) == pytest.approx(4.0 / 0.05, rel=1e-12)

    def test_raw_branch_by_finite_search(self):
        # Find a 1-D two-reference geometry with sigma_ep = 0.4 and
        # |grad| = 0.5 (unit kernel length), then check mu_sp = K_sp*0.5/dt.
        # Between the two references sigma_ep peaks at the midpoint with zero
        # slope, so scanning from the midpoint toward a reference crosses
        # sigma_ep = 0.4 at a tunable gradient; the ref spacing tunes it.
        def build(a):
            refs = ReferenceSet(
                inputs=np.array([[0.0], [float(a)]]),
                means=np.array([[0.5], [-0.5]]),
                covariances=np.array([[[0.04]], [[0.04]]]),
                dims=Dims(0, 1, 1, 1),
            )
            return kmp_fit(refs, KmpHyperparams(lam=0.5, lengths=np.array([1.0])))

        def crossing(a):
            model = build(a)
            f = lambda s: epistemic(model, np.array([s])) - 0.4
            return model, brentq(f, a / 2.0, a - 1e-6, xtol=1e-14)

        def grad_residual(a):
            model, s = crossing(a)
            _, grad = epistemic_with_gradient(model, np.array([s]))
            return abs(grad[0]) - 0.5

        a = brentq(grad_residual, 2.2, 5.0, xtol=1e-13)
        model, s = crossing(a)
        sig, grad = epistemic_with_gradient(model, np.array([s]))
        assert sig == pytest.approx(0.4, abs=1e-9)
        assert abs(grad[0]) == pytest.approx(0.5, abs=1e-8)
        v = stabilizing_velocity(model, np.array([s]), TABLE_PARAMS)
        assert np.linalg.norm(v) == pytest.approx(4.0 * 0.5 / 0.05, rel=1e-7)

    def test_velocity_bound_everywhere(self, zee_bundle):
        rng = np.random.default_rng(3)
        params = zee_bundle.fusion
        cap = params.k_sp / params.dt + 1e-9
        for s in rng.uniform(-1.5, 1.5, size=(300, 2)):
            v = stabilizing_velocity(zee_bundle.kmp, s, params)
            assert np.linalg.norm(v) <= cap

    def test_descent_property(self, zee_bundle):
        model, params = zee_bundle.kmp, zee_bundle.fusion
        rng = np.random.default_rng(4)
        eta = 1e-3 / params.k_sp
        checked = passed = 0
        while checked < 200:
            s = rng.uniform(-0.7, 0.7, size=2)
            sig, grad = epistemic_with_gradient(model, s)
            if sig < 1e-4 or np.linalg.norm(grad) <= 1e-6:
                continue
            checked += 1
            v = stabilizing_velocity(model, s, params)
            if np.linalg.norm(v) == 0.0:
                continue
            stepped = s + eta * v * params.dt
            if epistemic(model, stepped) < sig:
                passed += 1
        assert passed / checked >= 0.99


class TestGoalVelocity:
    def test_fixed_point(self):
        goals = np.array([[0.3, -0.2]])
        v = goal_velocity(np.array([0.3, -0.2]), goals, 0, TABLE_PARAMS)
        np.testing.assert_array_equal(v, np.zeros(2))

    def test_published_gains(self):
        goals = np.array([[0.11, 0.5]])
        v = goal_velocity(np.array([0.10, 0.5]), goals, 0, TABLE_PARAMS)
        np.testing.assert_allclose(v, [4.0, 0.0], atol=1e-12)

    def test_linearity(self):
        goals = np.array([[1.0, 2.0]])
        x = np.array([0.5, 1.0])
        v1 = goal_velocity(x, goals, 0, TABLE_PARAMS)
        v2 = goal_velocity(goals[0] - 2 * (goals[0] - x), goals, 0, TABLE_PARAMS)
        np.testing.assert_allclose(v2, 2 * v1, atol=1e-12)

    def test_bad_index(self):
        with pytest.raises(IndexError):
            goal_velocity(np.zeros(2), np.zeros((1, 2)), 3, TABLE_PARAMS)


class TestMoeCovariance:
    def test_single_expert_degenerates(self):
        rng = np.random.default_rng(5)
        means = rng.normal(size=(3, 2))
        covs = np.stack([np.eye(2) * (i + 1) for i in range(3)])
        out = moe_covariance(np.array([1.0, 0.0, 0.0]), means, covs)
        np.testing.assert_allclose(out, covs[0], atol=1e-12)

    def test_matches_sampling_oracle(self):
        rng = np.random.default_rng(6)
        means = np.array([[0.5, -1.0], [2.0, 0.3], [-1.5, 1.0]])
        covs = np.stack([
            np.array([[0.2, 0.05], [0.05, 0.1]]),
            np.array([[0.3, -0.1], [-0.1, 0.4]]),
            np.array([[0.15, 0.0], [0.0, 0.25]]),
        ])
        pis = np.array([0.5, 0.3, 0.2])
        formula = moe_covariance(pis, means, covs)
        # Monte-Carlo moment oracle.
        comp = rng.choice(3, size=200_000, p=pis)
        samples = np.empty((200_000, 2))
        for k in range(3):
            idx = np.flatnonzero(comp == k)
            samples[idx] = rng.multivariate_normal(means[k], covs[k], size=idx.size)
        empirical = np.cov(samples.T, bias=True)
        assert np.abs(formula - empirical).max() < 0.05 * np.abs(formula).max()

    def test_psd_for_random_mixtures(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            means = rng.normal(size=(3, 2))
            covs = np.empty((3, 2, 2))
            for k in range(3):
                a = rng.normal(size=(2, 2))
                covs[k] = a @ a.T + 0.01 * np.eye(2)
            pis = rng.dirichlet(np.ones(3))
            out = moe_covariance(pis, means, covs)
            assert np.linalg.eigvalsh(out).min() >= -1e-9


class TestFusedAction:
    def test_goal_dominates_at_goal(self, zee_bundle):
        params = FusionParams(pi_sp=0.0, dt=zee_bundle.fusion.dt)
        goals = zee_bundle.goals
        act = fused_action(zee_bundle.kmp, goals.inputs[0], goals, params)
        assert act.coefficients.k_max == 1.0
        np.testing.assert_array_equal(act.mean, act.expert_means[2])

    def test_stabilizer_dominates_at_pi_sp_one(self, zee_bundle):
        params = FusionParams(pi_sp=1.0 - 1e-12, dt=zee_bundle.fusion.dt)
        s = np.array([0.9, 0.9])
        act = fused_action(zee_bundle.kmp, s, goals=zee_bundle.goals, params=params)
        np.testing.assert_allclose(act.mean, act.expert_means[1], atol=1e-9)

    def test_mean_is_replayable(self, zee_bundle):
        rng = np.random.default_rng(8)
        for s in rng.uniform(-1, 1, size=(25, 2)):
            act = fused_action(zee_bundle.kmp, s, zee_bundle.goals, zee_bundle.fusion)
            c = act.coefficients
            replay = (c.pi_kmp * act.expert_means[0]
                      + c.pi_sp * act.expert_means[1]
                      + c.pi_g * act.expert_means[2])
            np.testing.assert_array_equal(act.mean, replay)

    def test_covariance_psd(self, zee_bundle):
        rng = np.random.default_rng(9)
        for s in rng.uniform(-1, 1, size=(20, 2)):
            act = fused_action(zee_bundle.kmp, s, zee_bundle.goals, zee_bundle.fusion)
            assert act.covariance is not None
            assert np.linalg.eigvalsh(act.covariance).min() >= -1e-9

    def test_position_lengths_helper(self, context_bundle):
        lengths = position_lengths(context_bundle.kmp)
        np.testing.assert_array_equal(lengths, [0.04, 0.04])
