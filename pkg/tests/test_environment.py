import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsbandit.environment import (
    DriftEvent, DriftKind, Environment, RewardPool, abrupt_schedule, abrupt_swap, check_drift,
    gradual_lambda, gradual_schedule, pool_mean, write_mean_trajectories,
)
from nsbandit.errors import ConfigurationError
from nsbandit.ingestion import synth_env

MEANS5 = [0.9, 0.7, 0.5, 0.3, 0.1]


def bern_env(horizon=100, schedule=(), seed=0, means=MEANS5):
    return Environment(synth_env(means, "bernoulli", 1000), horizon, schedule, np.random.default_rng(seed))


def test_pool_mean():
    assert pool_mean(RewardPool([1, 1, 0, 0])) == 0.5
    assert pool_mean(RewardPool([5, 4, 4, 3])) == 4.0
    assert RewardPool([2.5] * 7).mean == 2.5


def test_pool_validation():
    with pytest.raises(ConfigurationError):
        RewardPool([])
    with pytest.raises(ConfigurationError):
        RewardPool([0, 2], support=(0, 1))


class TestAbruptSwap:
    def test_rank_symmetric_pairing(self):
        pm = np.array(MEANS5)
        new = abrupt_swap(np.arange(5), pm)
        assert pm[new].tolist() == [0.1, 0.3, 0.5, 0.7, 0.9]

    def test_unsorted_arms(self):
        pm = np.array([0.5, 0.1, 0.9, 0.3, 0.7, 0.6])
        new = pm[abrupt_swap(np.arange(6), pm)]
        # best (arm 2) <-> worst (arm 1), second (arm 4) <-> second worst (arm 3)
        assert new.tolist() == [0.5, 0.9, 0.1, 0.7, 0.3, 0.6]

    @settings(max_examples=50)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=12, unique=True))
    def test_permutation_and_involution(self, means):
        pm = np.array(means)
        once = abrupt_swap(np.arange(pm.size), pm)
        assert sorted(pm[once]) == sorted(pm)
        twice = abrupt_swap(once, pm)
        assert twice.tolist() == list(range(pm.size))

    def test_needs_four_arms(self):
        with pytest.raises(ConfigurationError):
            abrupt_swap(np.arange(3), np.array([0.1, 0.2, 0.3]))

    def test_tie_break_lowest_index(self):
        pm = np.array([0.5, 0.5, 0.5, 0.5, 0.5])
        assert abrupt_swap(np.arange(5), pm).tolist() == [4, 3, 2, 1, 0]


class TestGradualLambda:
    @pytest.mark.parametrize("t,lam", [(30000, 0.0), (40000, 1.0), (35000, 0.5)])
    def test_values(self, t, lam):
        assert gradual_lambda(t, 30000, 10000) == lam

    def test_outside(self):
        with pytest.raises(ValueError):
            gradual_lambda(29999, 30000, 10000)


class TestTrueMeans:
    def test_abrupt_step(self):
        env = bern_env(100, abrupt_schedule([40, 70]))
        assert env.means_at(39).tolist() == MEANS5
        assert env.means_at(40).tolist() == [0.1, 0.3, 0.5, 0.7, 0.9]
        # ranks are re-evaluated: the second swap restores the original order
        assert env.means_at(70).tolist() == MEANS5
        assert env.oracle(39) == (0.9, 0)
        assert env.oracle(40) == (0.9, 4)

    def test_gradual_interpolation(self):
        env = bern_env(100, gradual_schedule([20], 10))
        assert env.true_mean_at(0, 20) == 0.9
        assert env.true_mean_at(0, 25) == pytest.approx(0.5)
        assert env.true_mean_at(4, 25) == pytest.approx(0.5)
        assert env.true_mean_at(2, 25) == 0.5  # unaffected arm
        assert env.true_mean_at(0, 30) == 0.1
        assert env.true_mean_at(0, 80) == 0.1
        # rising arm overtakes once lambda passes 1/2
        assert env.oracle(24)[1] == 0
        assert env.oracle(26)[1] == 4

    def test_oracle_stationary(self):
        env = Environment([RewardPool([0.1]), RewardPool([0.9]), RewardPool([0.5])], 10)
        assert env.oracle(5) == (0.9, 1)

    def test_schedule_validation(self):
        pools = synth_env(MEANS5, "bernoulli", 10)
        bad = [
            [DriftEvent(DriftKind.GRADUAL, 10, 20), DriftEvent(DriftKind.ABRUPT, 25)],
            [DriftEvent(DriftKind.ABRUPT, 50), DriftEvent(DriftKind.ABRUPT, 40)],
            [DriftEvent(DriftKind.GRADUAL, 90, 20)],
            [DriftEvent(DriftKind.GRADUAL, 10, 0)],
        ]
        for sched in bad:
            with pytest.raises(ConfigurationError):
                Environment(pools, 100, sched)
        with pytest.raises(ConfigurationError):
            Environment(pools[:3], 100, abrupt_schedule([50]))


class TestSampling:
    def test_constant_pool(self):
        env = Environment([RewardPool([1, 1, 1, 1])] * 4, 50, abrupt_schedule([10]))
        assert {env.sample_reward(a, t) for t in range(1, 51) for a in range(4)} == {1.0}

    def test_lambda_zero_is_source(self):
        pools = [RewardPool([1.0])] + [RewardPool([0.5])] * 3 + [RewardPool([0.0])]
        env = Environment(pools, 100, gradual_schedule([20], 10))
        assert all(env.sample_reward(0, 20) == 1.0 for _ in range(200))

    def test_mixture_mean_concentration(self):
        env = Environment(synth_env(MEANS5, "bernoulli", 1000), 100, gradual_schedule([20], 10),
                          np.random.default_rng(42))
        n = 100_000
        draws = np.array([env.sample_reward(0, 25) for _ in range(n)])
        assert abs(draws.mean() - 0.5) <= 3 * math.sqrt(0.25 / n)

    def test_support_closure(self):
        pools = synth_env([4.6, 3.9, 3.1, 2.2, 1.4], "ratings", 50, seed=1)
        env = Environment(pools, 200, gradual_schedule([50], 100), np.random.default_rng(0))
        for t in range(1, 201):
            for a in range(5):
                assert env.sample_reward(a, t) in env.support_of(a, t)

    def test_seeded_determinism(self):
        seqs = []
        for _ in range(2):
            env = bern_env(500, abrupt_schedule([100, 300]), seed=9)
            seqs.append([env.sample_reward(t % 5, t) for t in range(1, 501)])
        assert seqs[0] == seqs[1]

    def test_draws_do_not_depend_on_arm_history(self):
        # two uniforms per call regardless of arm: a shared tape
        a = bern_env(200, seed=4)
        b = bern_env(200, seed=4)
        ra = [a.sample_reward(0, t) for t in range(1, 101)]
        [b.sample_reward(3, t) for t in range(1, 51)]
        rb = [b.sample_reward(0, t) for t in range(51, 101)]
        assert ra[50:] == rb


class TestExportAndChecks:
    def test_stationary_columns_constant(self):
        rows = bern_env(1000).export_mean_trajectories(stride=100)
        for a in range(5):
            assert {m for _, arm, m in rows if arm == a} == {MEANS5[a]}

    def test_abrupt_export_has_boundaries(self, tmp_path):
        env = bern_env(10000, abrupt_schedule([3000, 4500, 6000, 9000]))
        rows = env.export_mean_trajectories(stride=1000)
        ts = {t for t, _, _ in rows}
        assert {2999, 3000, 4499, 4500, 5999, 6000, 8999, 9000} <= ts
        by = {(t, a): m for t, a, m in rows}
        assert by[(2999, 0)] == 0.9 and by[(3000, 0)] == 0.1
        path = tmp_path / "traj.csv"
        write_mean_trajectories(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,arm_id,true_mean"
        assert len(lines) == len(rows) + 1

    def test_checks_pass(self):
        assert check_drift(bern_env(2000, abrupt_schedule([300, 450, 600, 900]))) == []
        assert check_drift(bern_env(2000, gradual_schedule([300, 600], 100))) == []
        assert check_drift(bern_env(500)) == []

    def test_checks_catch_a_broken_environment(self):
        env = bern_env(200, abrupt_schedule([100]))
        seg = env._segments[1]
        broken = seg.source.copy()
        broken[[1, 2]] = broken[[2, 1]]
        env._seg_means[1] = env.pool_means[broken]
        bad = check_drift(env)
        assert bad and bad[0].t == 100
