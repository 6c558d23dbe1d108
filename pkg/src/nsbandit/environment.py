"""Semi-synthetic reward environments with scheduled drift.

An environment owns a list of empirical reward pools and an assignment
``arm -> pool``. Drift never edits pool contents; it only permutes which
pool backs which arm:

* abrupt swap: at its step, the two best arms trade pools with the two
  worst (rank 1 <-> last, rank 2 <-> second to last);
* gradual swap: the same pairing, but over ``duration`` steps the true mean
  of each affected arm moves linearly from its source pool's mean to its
  target pool's mean. Rewards are drawn from the target pool with
  probability ``lambda`` and from the source pool otherwise.

Ranks are evaluated against the means in force when the event starts.
The whole schedule is resolved at construction, so ``true_mean_at`` is a
pure function of ``(arm, t)`` and only reward sampling consumes randomness.
"""
from __future__ import annotations

import bisect
import csv
import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from nsbandit.errors import ConfigurationError, InvariantViolation


@dataclass(frozen=True, eq=False)
class RewardPool:
    samples: np.ndarray
    support: tuple[float, float] | None = None
    label: str = ""

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise ConfigurationError(f"reward pool {self.label!r} must be a nonempty 1-d sequence")
        if self.support is not None:
            lo, hi = self.support
            if arr.min() < lo or arr.max() > hi:
                raise ConfigurationError(f"reward pool {self.label!r} has samples outside {self.support}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def mean(self) -> float:
        return pool_mean(self)

    def __len__(self):
        return self.samples.size


def pool_mean(pool: RewardPool) -> float:
    return float(np.mean(pool.samples))


class DriftKind(str, enum.Enum):
    ABRUPT = "abrupt"
    GRADUAL = "gradual"


@dataclass(frozen=True)
class DriftEvent:
    kind: DriftKind
    start_step: int
    duration: int = 0

    @property
    def end_step(self) -> int:
        return self.start_step + self.duration


def abrupt_schedule(changepoints: Iterable[int]) -> list[DriftEvent]:
    return [DriftEvent(DriftKind.ABRUPT, int(t)) for t in changepoints]


def gradual_schedule(starts: Iterable[int], duration: int) -> list[DriftEvent]:
    return [DriftEvent(DriftKind.GRADUAL, int(t), int(duration)) for t in starts]


def validate_schedule(events: Sequence[DriftEvent], horizon: int) -> None:
    prev_end = 0
    prev_start = 0
    for ev in events:
        if ev.start_step < 1:
            raise ConfigurationError(f"drift event starts before step 1: {ev}")
        if ev.start_step <= prev_start:
            raise ConfigurationError("drift events must be strictly ascending by start step")
        if ev.kind is DriftKind.ABRUPT and ev.duration != 0:
            raise ConfigurationError("abrupt events have zero duration")
        if ev.kind is DriftKind.GRADUAL and ev.duration < 1:
            raise ConfigurationError("gradual events need a positive duration")
        if ev.start_step <= prev_end:
            raise ConfigurationError(f"drift event at {ev.start_step} overlaps the previous gradual window")
        if ev.end_step > horizon:
            raise ConfigurationError(f"drift event {ev} does not fit in horizon {horizon}")
        prev_start, prev_end = ev.start_step, ev.end_step


def rank_arms(arm_means: np.ndarray) -> np.ndarray:
    """Arms ordered best first; equal means keep ascending index order."""
    return np.lexsort((np.arange(arm_means.size), -arm_means))


def swap_pairs(arm_means: np.ndarray) -> list[tuple[int, int]]:
    """(best, worst) and (second best, second worst) arm pairs."""
    if arm_means.size < 4:
        raise ConfigurationError("top-2/bottom-2 swaps need at least 4 arms")
    order = rank_arms(arm_means)
    return [(int(order[0]), int(order[-1])), (int(order[1]), int(order[-2]))]


def abrupt_swap(assignment: np.ndarray, pool_means: np.ndarray) -> np.ndarray:
    """Return the arm->pool assignment after a top-2 / bottom-2 exchange."""
    new = np.array(assignment, copy=True)
    for a, b in swap_pairs(pool_means[assignment]):
        new[a], new[b] = assignment[b], assignment[a]
    return new


def gradual_lambda(t: int, start: int, duration: int) -> float:
    if duration < 1:
        raise ValueError("duration must be positive")
    if not start <= t <= start + duration:
        raise ValueError(f"t={t} outside the window [{start}, {start + duration}]")
    return (t - start) / duration


@dataclass(frozen=True)
class _Segment:
    first: int  # inclusive
    last: int  # inclusive
    source: np.ndarray  # arm -> pool index
    target: np.ndarray  # equals source outside gradual windows
    event: DriftEvent | None = None

    @property
    def gradual(self) -> bool:
        return self.event is not None and self.event.kind is DriftKind.GRADUAL


class Environment:
    """Piecewise-stationary bandit backed by empirical reward pools.

    Parameters
    ----------
    pools:
        One pool per arm; arm ``a`` starts on ``pools[a]``.
    horizon:
        Number of steps, numbered ``1..horizon``.
    schedule:
        Drift events, strictly ascending and non-overlapping.
    rng:
        Generator used only for reward draws.
    """

    _BLOCK = 4096

    def __init__(self, pools: Sequence[RewardPool], horizon: int,
                 schedule: Sequence[DriftEvent] = (), rng: np.random.Generator | None = None):
        if len(pools) < 1:
            raise ConfigurationError("an environment needs at least one arm")
        if horizon < 1:
            raise ConfigurationError("horizon must be >= 1")
        schedule = list(schedule)
        validate_schedule(schedule, horizon)
        if schedule and len(pools) < 4:
            raise ConfigurationError("drift needs at least 4 arms")
        self.pools = list(pools)
        self.horizon = int(horizon)
        self.schedule = schedule
        self.pool_means = np.array([p.mean for p in self.pools])
        self._samples = [p.samples for p in self.pools]
        self._sizes = [p.samples.size for p in self.pools]
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._buf = np.empty((0, 2))
        self._pos = 0
        self._segments = self._resolve()
        self._firsts = [s.first for s in self._segments]
        self._seg_means = [self.pool_means[s.source] for s in self._segments]

    @property
    def num_arms(self) -> int:
        return len(self.pools)

    def _resolve(self) -> list[_Segment]:
        cur = np.arange(len(self.pools))
        segs: list[_Segment] = []
        t0 = 1
        for ev in self.schedule:
            if ev.start_step > t0:
                segs.append(_Segment(t0, ev.start_step - 1, cur, cur))
            nxt = abrupt_swap(cur, self.pool_means)
            if ev.kind is DriftKind.GRADUAL:
                # lambda hits 1 at start+duration; that step belongs to the next segment
                segs.append(_Segment(ev.start_step, ev.end_step - 1, cur, nxt, ev))
                t0 = ev.end_step
            else:
                t0 = ev.start_step
            cur = nxt
        segs.append(_Segment(t0, max(t0, self.horizon), cur, cur))
        return segs

    def _segment(self, t: int) -> int:
        return bisect.bisect_right(self._firsts, t) - 1

    def assignment_at(self, t: int) -> np.ndarray:
        """Arm->pool assignment in force at ``t`` (source side during a window)."""
        return self._segments[self._segment(t)].source.copy()

    def changepoints(self) -> list[int]:
        return [ev.start_step for ev in self.schedule]

    def means_at(self, t: int) -> np.ndarray:
        """True expected reward of every arm at step ``t``. Do not mutate."""
        i = self._segment(t)
        seg = self._segments[i]
        if not seg.gradual:
            return self._seg_means[i]
        lam = gradual_lambda(t, seg.event.start_step, seg.event.duration)
        return (1.0 - lam) * self.pool_means[seg.source] + lam * self.pool_means[seg.target]

    def true_mean_at(self, arm: int, t: int) -> float:
        return float(self.means_at(t)[arm])

    def mean_matrix(self, ts: Sequence[int]) -> np.ndarray:
        return np.vstack([self.means_at(int(t)) for t in ts])

    def oracle(self, t: int) -> tuple[float, int]:
        m = self.means_at(t)
        best = int(np.argmax(m))
        return float(m[best]), best

    def _uniforms(self) -> np.ndarray:
        if self._pos >= len(self._buf):
            self._buf = self.rng.random((self._BLOCK, 2))
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def sample_reward(self, arm: int, t: int) -> float:
        """Draw one reward; consumes exactly two uniforms whatever the arm."""
        u_pick, u_mix = self._uniforms()
        seg = self._segments[self._segment(t)]
        pool = seg.source[arm]
        if seg.gradual and seg.target[arm] != pool:
            lam = gradual_lambda(t, seg.event.start_step, seg.event.duration)
            if u_mix < lam:
                pool = seg.target[arm]
        return float(self._samples[pool][int(u_pick * self._sizes[pool])])

    def support_of(self, arm: int, t: int) -> set[float]:
        seg = self._segments[self._segment(t)]
        return set(self._samples[seg.source[arm]]) | set(self._samples[seg.target[arm]])

    # ------------------------------------------------------------ export / checks

    def record_steps(self, stride: int) -> list[int]:
        """Stride grid plus both sides of every drift boundary, within 1..T."""
        ts = set(range(stride, self.horizon + 1, stride)) | {1, self.horizon}
        for ev in self.schedule:
            ts |= {ev.start_step - 1, ev.start_step, ev.end_step}
        return sorted(t for t in ts if 1 <= t <= self.horizon)

    def export_mean_trajectories(self, stride: int = 100) -> list[tuple[int, int, float]]:
        rows = []
        for t in self.record_steps(stride):
            m = self.means_at(t)
            rows.extend((t, a, float(m[a])) for a in range(self.num_arms))
        return rows


def write_mean_trajectories(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "arm_id", "true_mean"])
        for t, a, m in rows:
            w.writerow([t, a, repr(m)])


@dataclass(frozen=True)
class Violation:
    t: int
    arm: int
    message: str

    def __str__(self):
        return f"t={self.t} arm={self.arm}: {self.message}"


def check_drift(env: Environment, tol: float = 1e-12) -> list[Violation]:
    """Verify the mean trajectory against the drift rules, step by step.

    Expected values are recomputed from the mean vectors alone (ranking and
    pairing redone here), not read from the environment's assignment. The
    gradual check allows ``tol`` for floating-point rounding of the blend.
    """
    T = env.horizon
    M = env.mean_matrix(range(1, T + 1))  # row i is step i+1
    base = np.sort(env.pool_means)
    out: list[Violation] = []
    windows = {ev.start_step: ev for ev in env.schedule if ev.kind is DriftKind.GRADUAL}
    abrupt = {ev.start_step for ev in env.schedule if ev.kind is DriftKind.ABRUPT}
    inside = np.zeros(T + 2, dtype=bool)  # steps strictly inside a blend (start, end)
    for ev in windows.values():
        inside[ev.start_step + 1:ev.end_step] = True

    for t in range(1, T + 1):
        row = M[t - 1]
        if not inside[t] and not np.array_equal(np.sort(row), base):
            out.append(Violation(t, -1, "mean multiset differs from the initial pool means"))
        if t == 1:
            continue
        prev = M[t - 2]
        if t in abrupt:
            expected = prev.copy()
            for a, b in swap_pairs(prev):
                expected[a], expected[b] = prev[b], prev[a]
            for a in np.flatnonzero(row != expected):
                out.append(Violation(t, int(a), f"abrupt step gives {row[a]!r}, expected {expected[a]!r}"))
        elif not inside[t] and not inside[t - 1] and t - 1 not in windows:
            for a in np.flatnonzero(row != prev):
                out.append(Violation(t, int(a), "mean changed outside any drift event"))

    for s, ev in windows.items():
        before = M[s - 2] if s >= 2 else M[s - 1]
        expected_end = before.copy()
        for a, b in swap_pairs(before):
            expected_end[a], expected_end[b] = before[b], before[a]
        start_row, end_row = M[s - 1], M[ev.end_step - 1]
        for a in np.flatnonzero(start_row != before):
            out.append(Violation(s, int(a), "gradual window does not start at the pre-drift mean"))
        for a in np.flatnonzero(end_row != expected_end):
            out.append(Violation(ev.end_step, int(a), "gradual window does not end at the swapped mean"))
        steps = np.arange(s, ev.end_step + 1)
        frac = (steps - s) / ev.duration
        line = start_row[None, :] + frac[:, None] * (end_row - start_row)[None, :]
        dev = np.abs(M[s - 1:ev.end_step] - line)
        scale = np.maximum(1.0, np.abs(line))
        for i, a in zip(*np.nonzero(dev > tol * scale)):
            out.append(Violation(int(steps[i]), int(a), f"off the interpolation line by {dev[i, a]:.3g}"))
    return out


def assert_drift_valid(env: Environment) -> None:
    bad = check_drift(env)
    if bad:
        raise InvariantViolation("; ".join(str(v) for v in bad[:10]))
