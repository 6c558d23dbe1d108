import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsbandit.errors import ConfigurationError
from nsbandit.policies import (
    Aggregation, DiscountedState, DiscountedUCB, DualViewState, DualViewUCB, SlidingWindowUCB,
    UCB1, WindowState, aggregate, ducb_score, ducb_update, fdsw_score, fdsw_update,
    heuristic_window, select_arm, sw_push, sw_score, ucb1_score,
)

# frozen from a 30-digit mpmath evaluation of mean + alpha*sqrt(ln(total)/count)
BONUS_LN10_OVER_2 = 1.07298301314467361981809178515


def discounted(sums, counts, gamma=0.9):
    return DiscountedState(np.array(sums, float), np.array(counts, float), gamma)


def windows(tau, contents):
    s = WindowState.new(len(contents), tau)
    for arm, vals in enumerate(contents):
        for v in vals:
            sw_push(s, arm, v)
    return s


class TestUcb1Score:
    def test_derived_value(self):
        assert ucb1_score(0.5, 4, 100, 1.0) == pytest.approx(0.5 + BONUS_LN10_OVER_2, rel=1e-12)

    def test_zero_alpha(self):
        assert ucb1_score(3.0, 7, 50, 0.0) == 3.0

    def test_first_round_has_no_bonus(self):
        assert ucb1_score(3.0, 1, 1, 1.0) == 3.0

    def test_zero_pulls_rejected(self):
        with pytest.raises(ValueError):
            ucb1_score(0.0, 0, 10, 1.0)


class TestDiscounted:
    def test_score_derived(self):
        s = discounted([5.0, 8.0], [2.0, 8.0])
        assert ducb_score(s, 0, 1.0) == pytest.approx(2.5 + BONUS_LN10_OVER_2, rel=1e-12)

    def test_score_exploitation_only(self):
        assert ducb_score(discounted([5.0, 8.0], [2.0, 8.0]), 0, 0.0) == 2.5

    def test_score_log_one(self):
        assert ducb_score(discounted([0.0, 0.0], [1.0, 0.0]), 0, 1.0) == 0.0

    def test_cold_arm_rejected(self):
        with pytest.raises(ValueError):
            ducb_score(discounted([0.0, 1.0], [0.0, 1.0]), 0, 1.0)

    def test_update_chosen_and_unchosen(self):
        s = discounted([10.0, 4.0], [5.0, 2.0], gamma=0.9)
        ducb_update(s, 0, 1.0)
        assert s.discounted_sum[0] == pytest.approx(10.0)
        assert s.discounted_count[0] == pytest.approx(5.5)
        assert s.discounted_sum[1] == pytest.approx(3.6)
        assert s.discounted_count[1] == pytest.approx(1.8)

    def test_gamma_one_is_raw_sums(self):
        s = discounted([4.0, 7.0], [2.0, 3.0], gamma=1.0)
        ducb_update(s, 0, 0.5)
        assert (s.discounted_sum[0], s.discounted_count[0]) == (4.5, 3.0)
        assert (s.discounted_sum[1], s.discounted_count[1]) == (7.0, 3.0)

    @pytest.mark.parametrize("gamma", [0.0, -0.1, 1.5])
    def test_gamma_range(self, gamma):
        with pytest.raises(ConfigurationError):
            DiscountedState.new(2, gamma)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.5, 0.999), st.lists(st.integers(0, 3), min_size=1, max_size=200))
    def test_count_bound(self, gamma, arms):
        s = DiscountedState.new(4, gamma)
        for a in arms:
            ducb_update(s, a, 1.0)
        u = len(arms)
        bound = (1 - gamma ** u) / (1 - gamma)
        assert (s.discounted_count <= bound * (1 + 1e-12)).all()
        assert (s.discounted_count < 1 / (1 - gamma)).all()
        assert s.discounted_count.sum() == pytest.approx(bound, rel=1e-9)


class TestWindows:
    def test_fifo_eviction(self):
        s = windows(3, [[1, 0, 1]])
        sw_push(s, 0, 0)
        assert list(s.windows[0]) == [0, 1, 0]
        assert s.window_sum[0] == 1 and s.window_len[0] == 3

    def test_below_capacity(self):
        s = windows(3, [[1]])
        sw_push(s, 0, 5)
        assert list(s.windows[0]) == [1, 5]

    def test_capacity_one(self):
        s = windows(1, [[2]])
        sw_push(s, 0, 4)
        assert list(s.windows[0]) == [4]

    def test_other_arms_untouched(self):
        s = windows(2, [[1, 2], [3]])
        sw_push(s, 0, 9)
        assert list(s.windows[1]) == [3]

    def test_score_derived(self):
        s = windows(10, [[4, 5], [1] * 8])
        assert sw_score(s, 0, 1.0) == pytest.approx(4.5 + BONUS_LN10_OVER_2, rel=1e-12)
        assert sw_score(s, 0, 0.0) == 4.5

    def test_score_single(self):
        assert sw_score(windows(5, [[1.0]]), 0, 1.0) == 1.0

    def test_empty_window_rejected(self):
        with pytest.raises(ValueError):
            sw_score(windows(5, [[], [1]]), 0, 1.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.lists(st.tuples(st.integers(0, 2), st.integers(0, 5)), max_size=80))
    def test_capacity_and_order(self, tau, pushes):
        s = WindowState.new(3, tau)
        history = [[], [], []]
        for t, (arm, r) in enumerate(pushes, 1):
            sw_push(s, arm, r)
            history[arm].append(r)
            for a in range(3):
                assert list(s.windows[a]) == history[a][-tau:]
                assert s.window_len[a] == len(s.windows[a]) <= tau
                assert s.window_sum[a] == sum(s.windows[a])
            assert s.total_len <= min(t, 3 * tau)


class TestAggregation:
    @pytest.mark.parametrize("kind,expected", [("mean", 3), ("max", 4), ("min", 2)])
    def test_examples(self, kind, expected):
        assert aggregate(kind, 2, 4) == expected

    finite = st.floats(-1e6, 1e6, allow_nan=False)

    @given(finite, finite)
    def test_dominance(self, x, y):
        assert aggregate("min", x, y) <= aggregate("mean", x, y) <= aggregate("max", x, y)

    @given(finite, finite, st.sampled_from(list(Aggregation)))
    def test_equal_inputs(self, x, _, kind):
        assert aggregate(kind, x, x) == x

    @given(finite, finite, st.floats(-1e3, 1e3), st.sampled_from(list(Aggregation)))
    def test_shift_covariance(self, x, y, d, kind):
        assert aggregate(kind, x + d, y + d) == pytest.approx(aggregate(kind, x, y) + d, abs=1e-6)


class TestDualView:
    def test_update_composes_both_views(self):
        s = DualViewState.new(5, gamma=0.9, tau=3, aggregation="mean")
        for a, r in [(0, 1.0), (2, 0.0), (2, 1.0)]:
            fdsw_update(s, a, r)
        before_sum = s.discounted.discounted_sum.copy()
        before_cnt = s.discounted.discounted_count.copy()
        before_w = [list(w) for w in s.windowed.windows]
        fdsw_update(s, 2, 1.0)
        assert s.discounted.discounted_sum[2] == pytest.approx(0.9 * before_sum[2] + 1)
        assert s.discounted.discounted_count[2] == pytest.approx(0.9 * before_cnt[2] + 1)
        for a in (0, 1, 3, 4):
            assert list(s.windowed.windows[a]) == before_w[a]
            assert s.discounted.discounted_count[a] == pytest.approx(0.9 * before_cnt[a])
        assert list(s.windowed.windows[2]) == [0.0, 1.0, 1.0]

    def test_score_composition(self):
        s = DualViewState(discounted([5.0, 8.0], [2.0, 8.0]), windows(10, [[4, 5], [1] * 8]), Aggregation.MEAN)
        ud = 2.5 + BONUS_LN10_OVER_2
        usw = 4.5 + BONUS_LN10_OVER_2
        assert fdsw_score(s, 0, 1.0) == pytest.approx((ud + usw) / 2, rel=1e-12)
        s.aggregation = Aggregation.MIN
        assert fdsw_score(s, 0, 1.0) == pytest.approx(ud, rel=1e-12)
        s.aggregation = Aggregation.MAX
        assert fdsw_score(s, 0, 1.0) == pytest.approx(usw, rel=1e-12)

    def test_degenerate_views_agree(self):
        rng = np.random.default_rng(3)
        s = DualViewState.new(4, gamma=1.0, tau=1000, aggregation="min")
        for _ in range(300):
            fdsw_update(s, int(rng.integers(4)), float(rng.random()))
            d, w = s.discounted, s.windowed
            warm = w.window_len > 0
            np.testing.assert_array_equal(d.discounted_sum[warm] / d.discounted_count[warm],
                                          w.window_sum[warm] / w.window_len[warm])


class TestSelectArm:
    def test_tie_lowest_index(self):
        assert select_arm([1.0, 2.0, 2.0]) == 1

    def test_cold_first(self):
        assert select_arm([9.0, 0.0, 0.0, 0.0], {3, 1}) == 1

    def test_single(self):
        assert select_arm([0.1]) == 0

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            select_arm([])


class TestHeuristicWindow:
    @pytest.mark.parametrize("T,N,c,tau", [(100000, 4, 1.0, 25000), (100000, 4, 0.5, 12500), (10, 100, 0.001, 1)])
    def test_values(self, T, N, c, tau):
        assert heuristic_window(T, N, c) == tau

    def test_no_changepoints(self):
        with pytest.raises(ConfigurationError):
            heuristic_window(1000, 0, 1.0)


class TestPolicies:
    def test_round_robin_cold_start(self):
        p = UCB1(4)
        picks = []
        for _ in range(4):
            a = p.select()
            picks.append(a)
            p.update(a, 0.0)
        assert picks == [0, 1, 2, 3]

    def test_vector_scores_match_scalar(self):
        rng = np.random.default_rng(0)
        pols = [UCB1(5, 0.7), DiscountedUCB(5, 0.7, 0.95), SlidingWindowUCB(5, 7, 0.7),
                DualViewUCB(5, 7, 0.7, 0.95, "mean")]
        for _ in range(200):
            for p in pols:
                a = int(rng.integers(5))
                p.update(a, float(rng.integers(1, 6)))
        u, d, w, f = pols
        for a in range(5):
            n = int(u.state.pull_count[a])
            assert u.scores()[a] == pytest.approx(
                ucb1_score(u.state.reward_sum[a] / n, n, u.state.rounds_elapsed, 0.7), rel=1e-12)
            assert d.scores()[a] == pytest.approx(ducb_score(d.state, a, 0.7), rel=1e-12)
            assert w.scores()[a] == pytest.approx(sw_score(w.state, a, 0.7), rel=1e-12)
            assert f.scores()[a] == pytest.approx(fdsw_score(f.state, a, 0.7), rel=1e-12)

    def test_discounted_arm_goes_cold_again(self):
        p = DiscountedUCB(2, gamma=0.5)
        p.update(0, 1.0)
        p.update(1, 1.0)
        for _ in range(40):
            p.update(1, 1.0)
        assert p.cold_arms().tolist() == [True, False]
        assert p.select() == 0

    def test_fdsw_cold_in_either_view(self):
        p = DualViewUCB(2, tau=5, gamma=0.5)
        p.update(0, 1.0)
        p.update(1, 1.0)
        for _ in range(40):
            p.update(1, 1.0)
        # window for arm 0 still holds its sample; discounted view has forgotten it
        assert p.state.windowed.window_len[0] == 1
        assert p.select() == 0

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=5, max_size=200), st.sampled_from(["ucb1", "ducb", "sw", "fdsw"]))
    def test_replay_is_deterministic(self, rewards, kind):
        def make():
            return {"ucb1": lambda: UCB1(3), "ducb": lambda: DiscountedUCB(3, gamma=0.9),
                    "sw": lambda: SlidingWindowUCB(3, 4), "fdsw": lambda: DualViewUCB(3, 4, gamma=0.9)}[kind]()
        runs = []
        for _ in range(2):
            p, seq = make(), []
            for r in rewards:
                a = p.select()
                p.update(a, r)
                seq.append(a)
            runs.append(seq)
        assert runs[0] == runs[1]

    def test_ducb_bonus_bounded_below(self):
        gamma, alpha = 0.99, 1.0
        p = DiscountedUCB(3, alpha, gamma)
        rng = np.random.default_rng(1)
        for _ in range(3000):
            a = p.select()
            p.update(a, float(rng.random() < [0.9, 0.5, 0.1][a]))
            total = p.state.total_count
            if total > 1:
                floor = alpha * math.sqrt(math.log(total) * (1 - gamma))
                b = p.exploration_bonus()
                b = b[~np.isnan(b)]
                assert (b >= floor * (1 - 1e-12)).all()
