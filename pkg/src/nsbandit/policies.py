"""UCB-family policies for stationary and drifting bandits.

Four index policies share one select/update interface:

* ``UCB1``      raw counts and sums
* ``DiscountedUCB``  exponentially discounted sums and counts
* ``SlidingWindowUCB``  one bounded FIFO of rewards per arm
* ``DualViewUCB``  both of the above, fused by min / mean / max

All of them are deterministic: selection is a pure function of the
statistics, ties go to the lowest arm index and any cold arm is pulled
before scoring starts (lowest index first).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from nsbandit.errors import ConfigurationError

# below this discounted count an arm is treated as never pulled
EPS_COUNT = 1e-9


class Aggregation(str, Enum):
    MEAN = "mean"
    MAX = "max"
    MIN = "min"


def aggregate(kind: Aggregation | str, x, y):
    """Fuse two scores. Works on scalars and on numpy arrays."""
    kind = Aggregation(kind)
    if kind is Aggregation.MEAN:
        return (x + y) / 2
    if kind is Aggregation.MAX:
        return np.maximum(x, y) if isinstance(x, np.ndarray) else max(x, y)
    return np.minimum(x, y) if isinstance(x, np.ndarray) else min(x, y)


def _bonus(alpha: float, total: float, count):
    # ln(total) is clamped at 0 so the first rounds (total <= 1) stay real
    return alpha * np.sqrt(max(0.0, math.log(total)) / count) if total > 0 else 0.0 * count


def ucb1_score(mean: float, pull_count: int, rounds_elapsed: int, alpha: float) -> float:
    if pull_count < 1:
        raise ValueError("ucb1_score needs pull_count >= 1; cold arms are handled by select_arm")
    if rounds_elapsed < 1:
        raise ValueError("rounds_elapsed must be >= 1")
    return mean + alpha * math.sqrt(max(0.0, math.log(rounds_elapsed)) / pull_count)


def select_arm(scores: Sequence[float], cold_arms: Iterable[int] = ()) -> int:
    """Lowest-index cold arm if there is one, else the lowest-index argmax."""
    cold = sorted(cold_arms)
    if cold:
        return int(cold[0])
    if len(scores) == 0:
        raise ConfigurationError("cannot select from an empty arm set")
    return int(np.argmax(np.asarray(scores, dtype=float)))


def heuristic_window(horizon: int, num_changepoints: int, c: float = 1.0) -> int:
    """Window length covering the average stationary phase, ``round(c*T/N)``."""
    if num_changepoints <= 0:
        raise ConfigurationError(
            "window heuristic needs at least one changepoint; pass tau explicitly for stationary runs"
        )
    if horizon < 1 or c <= 0:
        raise ConfigurationError("horizon must be >= 1 and c > 0")
    return max(1, int(round(c * horizon / num_changepoints)))


# ---------------------------------------------------------------- states


@dataclass
class Ucb1State:
    reward_sum: np.ndarray
    pull_count: np.ndarray  # float array holding integers
    rounds_elapsed: int = 0

    @classmethod
    def new(cls, num_arms: int) -> "Ucb1State":
        return cls(np.zeros(num_arms), np.zeros(num_arms))


def ucb1_update(state: Ucb1State, chosen: int, reward: float) -> Ucb1State:
    state.reward_sum[chosen] += reward
    state.pull_count[chosen] += 1
    state.rounds_elapsed += 1
    return state


@dataclass
class DiscountedState:
    discounted_sum: np.ndarray
    discounted_count: np.ndarray
    gamma: float

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")

    @classmethod
    def new(cls, num_arms: int, gamma: float) -> "DiscountedState":
        return cls(np.zeros(num_arms), np.zeros(num_arms), gamma)

    @property
    def total_count(self) -> float:
        return float(self.discounted_count.sum())

    def cold(self) -> np.ndarray:
        return self.discounted_count <= EPS_COUNT


def ducb_update(state: DiscountedState, chosen: int, reward: float) -> DiscountedState:
    """Decay every arm by gamma, then credit the chosen one with (reward, 1)."""
    g = state.gamma
    state.discounted_sum *= g
    state.discounted_count *= g
    state.discounted_sum[chosen] += reward
    state.discounted_count[chosen] += 1.0
    return state


def ducb_score(state: DiscountedState, arm: int, alpha: float) -> float:
    n = state.discounted_count[arm]
    if n <= EPS_COUNT:
        raise ValueError(f"arm {arm} is cold in the discounted view")
    total = state.total_count
    return float(state.discounted_sum[arm] / n + _bonus(alpha, total, n))


@dataclass
class WindowState:
    """Per-arm FIFO windows sharing one capacity ``tau``.

    ``window_sum`` is kept incrementally so scoring never walks the queues.
    """

    tau: int
    windows: list = field(default_factory=list)
    window_sum: np.ndarray = None
    window_len: np.ndarray = None

    @classmethod
    def new(cls, num_arms: int, tau: int) -> "WindowState":
        if tau < 1:
            raise ConfigurationError(f"window size must be >= 1, got {tau}")
        return cls(tau, [deque() for _ in range(num_arms)], np.zeros(num_arms), np.zeros(num_arms))

    @property
    def total_len(self) -> float:
        return float(self.window_len.sum())

    def cold(self) -> np.ndarray:
        return self.window_len == 0


def sw_push(state: WindowState, chosen: int, reward: float) -> WindowState:
    w = state.windows[chosen]
    if len(w) == state.tau:
        old = w.popleft()
        state.window_sum[chosen] = state.window_sum[chosen] - old + reward
    else:
        state.window_sum[chosen] += reward
        state.window_len[chosen] += 1
    w.append(reward)
    return state


def sw_score(state: WindowState, arm: int, alpha: float) -> float:
    n = state.window_len[arm]
    if n == 0:
        raise ValueError(f"arm {arm} has an empty window")
    return float(state.window_sum[arm] / n + _bonus(alpha, state.total_len, n))


@dataclass
class DualViewState:
    discounted: DiscountedState
    windowed: WindowState
    aggregation: Aggregation

    @classmethod
    def new(cls, num_arms: int, gamma: float, tau: int, aggregation) -> "DualViewState":
        return cls(DiscountedState.new(num_arms, gamma), WindowState.new(num_arms, tau), Aggregation(aggregation))

    def cold(self) -> np.ndarray:
        return self.discounted.cold() | self.windowed.cold()


def fdsw_update(state: DualViewState, chosen: int, reward: float) -> DualViewState:
    ducb_update(state.discounted, chosen, reward)
    sw_push(state.windowed, chosen, reward)
    return state


def fdsw_score(state: DualViewState, arm: int, alpha: float, alpha_window: float | None = None) -> float:
    a_sw = alpha if alpha_window is None else alpha_window
    return float(aggregate(state.aggregation, ducb_score(state.discounted, arm, alpha),
                           sw_score(state.windowed, arm, a_sw)))


# ---------------------------------------------------------------- vectorised scores
# These mirror the scalar functions above operation for operation, so the
# degenerate configurations (gamma=1, tau>=T) reproduce UCB1 bit for bit.


def _index_scores(sums: np.ndarray, counts: np.ndarray, total: float, alpha: float) -> np.ndarray:
    out = np.full(counts.shape, np.nan)
    warm = counts > 0
    c = counts[warm]
    out[warm] = sums[warm] / c + _bonus(alpha, total, c)
    return out


class Policy:
    """Common interface: ``select()`` then ``update(arm, reward)``."""

    name = "policy"

    def __init__(self, num_arms: int):
        if num_arms < 1:
            raise ConfigurationError("a bandit needs at least one arm")
        self.num_arms = num_arms

    def cold_arms(self) -> np.ndarray:
        return np.zeros(self.num_arms, dtype=bool)

    def scores(self) -> np.ndarray:
        raise NotImplementedError

    def select(self) -> int:
        cold = np.flatnonzero(self.cold_arms())
        if cold.size:
            return int(cold[0])
        return int(np.argmax(self.scores()))

    def update(self, arm: int, reward: float) -> None:
        raise NotImplementedError


class UCB1(Policy):
    name = "UCB1"

    def __init__(self, num_arms: int, alpha: float = 1.0):
        super().__init__(num_arms)
        if alpha < 0:
            raise ConfigurationError("alpha must be nonnegative")
        self.alpha = alpha
        self.state = Ucb1State.new(num_arms)

    def cold_arms(self):
        return self.state.pull_count == 0

    def scores(self):
        s = self.state
        return _index_scores(s.reward_sum, s.pull_count, float(s.rounds_elapsed), self.alpha)

    def update(self, arm, reward):
        ucb1_update(self.state, arm, reward)


class DiscountedUCB(Policy):
    name = "D-UCB"

    def __init__(self, num_arms: int, alpha: float = 1.0, gamma: float = 0.999):
        super().__init__(num_arms)
        if alpha < 0:
            raise ConfigurationError("alpha must be nonnegative")
        self.alpha = alpha
        self.state = DiscountedState.new(num_arms, gamma)

    def cold_arms(self):
        return self.state.cold()

    def scores(self):
        s = self.state
        out = _index_scores(s.discounted_sum, s.discounted_count, s.total_count, self.alpha)
        out[s.cold()] = np.nan
        return out

    def exploration_bonus(self) -> np.ndarray:
        s = self.state
        return _index_scores(np.zeros(self.num_arms), s.discounted_count, s.total_count, self.alpha)

    def update(self, arm, reward):
        ducb_update(self.state, arm, reward)


class SlidingWindowUCB(Policy):
    name = "SW-UCB"

    def __init__(self, num_arms: int, tau: int, alpha: float = 1.0):
        super().__init__(num_arms)
        if alpha < 0:
            raise ConfigurationError("alpha must be nonnegative")
        self.alpha = alpha
        self.state = WindowState.new(num_arms, tau)

    def cold_arms(self):
        return self.state.cold()

    def scores(self):
        s = self.state
        return _index_scores(s.window_sum, s.window_len, s.total_len, self.alpha)

    def update(self, arm, reward):
        sw_push(self.state, arm, reward)


class DualViewUCB(Policy):
    """Discounted (long memory) and windowed (short memory) scores fused per arm."""

    def __init__(self, num_arms: int, tau: int, alpha: float = 1.0, gamma: float = 0.999,
                 aggregation: Aggregation | str = Aggregation.MAX, alpha_window: float | None = None):
        super().__init__(num_arms)
        if alpha < 0 or (alpha_window is not None and alpha_window < 0):
            raise ConfigurationError("alpha must be nonnegative")
        self.alpha = alpha
        self.alpha_window = alpha if alpha_window is None else alpha_window
        self.state = DualViewState.new(num_arms, gamma, tau, aggregation)
        self.name = f"FDSW-UCB ({self.state.aggregation.value})"

    def cold_arms(self):
        return self.state.cold()

    def view_scores(self) -> tuple[np.ndarray, np.ndarray]:
        d, w = self.state.discounted, self.state.windowed
        ud = _index_scores(d.discounted_sum, d.discounted_count, d.total_count, self.alpha)
        ud[d.cold()] = np.nan
        usw = _index_scores(w.window_sum, w.window_len, w.total_len, self.alpha_window)
        return ud, usw

    def all_aggregates(self) -> dict[Aggregation, np.ndarray]:
        ud, usw = self.view_scores()
        return {k: aggregate(k, ud, usw) for k in Aggregation}

    def scores(self):
        ud, usw = self.view_scores()
        return aggregate(self.state.aggregation, ud, usw)

    def update(self, arm, reward):
        fdsw_update(self.state, arm, reward)


class FixedArmPolicy(Policy):
    """Always pulls the same arm. Used for closed-form regret checks."""

    def __init__(self, num_arms: int, arm: int):
        super().__init__(num_arms)
        if not 0 <= arm < num_arms:
            raise ConfigurationError(f"arm {arm} out of range")
        self.arm = arm
        self.name = f"fixed-{arm}"

    def select(self):
        return self.arm

    def update(self, arm, reward):
        pass


class OraclePolicy(Policy):
    """Pulls the true best arm at every step; needs the environment's oracle."""

    name = "oracle"

    def __init__(self, env):
        super().__init__(env.num_arms)
        self.env = env
        self.t = 1

    def select(self):
        return self.env.oracle(self.t)[1]

    def update(self, arm, reward):
        self.t += 1
