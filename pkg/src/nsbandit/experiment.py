"""Scenario matrix, seeded episodes, expected-regret accounting and reports."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from nsbandit import ingestion
from nsbandit.environment import (DriftKind, Environment, RewardPool, abrupt_schedule,
                                  gradual_schedule)
from nsbandit.errors import ConfigurationError, InvariantViolation
from nsbandit.policies import (Aggregation, DiscountedUCB, DualViewUCB, FixedArmPolicy,
                               OraclePolicy, Policy, SlidingWindowUCB, UCB1, heuristic_window)
from nsbandit.seeding import derive_seed, stream

DYNAMICS = ("stationary", "abrupt", "gradual")

# full-scale protocol: T, abrupt changepoints, gradual starts and length, runs
FULL_HORIZON = 100_000
FULL_CHANGEPOINTS = (30_000, 45_000, 60_000, 90_000)
FULL_GRADUAL_STARTS = (30_000, 60_000)
FULL_GRADUAL_DURATION = 10_000
FULL_RUNS = 3
DESK_SCALE = 0.1


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class PolicySpec:
    kind: str  # ucb1 | ducb | swucb | fdsw | fixed | oracle
    alpha: float = 1.0
    gamma: float = 0.999
    tau: int | None = None
    c: float = 1.0
    aggregation: str | None = None
    arm: int | None = None
    alpha_window: float | None = None

    def __post_init__(self):
        if self.kind not in ("ucb1", "ducb", "swucb", "fdsw", "fixed", "oracle"):
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        if self.kind == "fdsw":
            object.__setattr__(self, "aggregation", Aggregation(self.aggregation or "max").value)
        if self.kind == "fixed" and self.arm is None:
            raise ConfigurationError("fixed policy needs an arm")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be nonnegative")
        if not 0 < self.gamma <= 1:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.tau is not None and self.tau < 1:
            raise ConfigurationError("tau must be >= 1")
        if self.c <= 0:
            raise ConfigurationError("c must be positive")

    @property
    def label(self) -> str:
        return {
            "ucb1": "UCB1", "ducb": "D-UCB", "swucb": "SW-UCB", "oracle": "oracle",
            "fdsw": f"FDSW-UCB ({self.aggregation})", "fixed": f"fixed-{self.arm}",
        }[self.kind]

    @property
    def uses_window(self) -> bool:
        return self.kind in ("swucb", "fdsw")


POLICY_ALIASES = {
    "ucb1": dict(kind="ucb1"), "ducb": dict(kind="ducb"), "swucb": dict(kind="swucb"),
    "fdsw-min": dict(kind="fdsw", aggregation="min"),
    "fdsw-mean": dict(kind="fdsw", aggregation="mean"),
    "fdsw-max": dict(kind="fdsw", aggregation="max"),
}
DEFAULT_POLICIES = tuple(POLICY_ALIASES)


def policy_specs(names: Sequence[str] = DEFAULT_POLICIES, **params) -> tuple[PolicySpec, ...]:
    out = []
    for n in names:
        if n not in POLICY_ALIASES:
            raise ConfigurationError(f"unknown policy {n!r}; choose from {', '.join(POLICY_ALIASES)}")
        out.append(PolicySpec(**POLICY_ALIASES[n], **params))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class PoolSource:
    """Arm pools for a scenario, either given directly or synthesised lazily."""

    label: str
    pools: tuple[RewardPool, ...] | None = None
    means: tuple[float, ...] | None = None
    support: str = "bernoulli"
    pool_size: int = 1000
    seed: int = 0

    @cached_property
    def arm_pools(self) -> tuple[RewardPool, ...]:
        if self.pools is not None:
            return tuple(self.pools)
        if self.means is None:
            raise ConfigurationError(f"source {self.label!r} has neither pools nor target means")
        return tuple(ingestion.synth_env(self.means, self.support, self.pool_size, self.seed))


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    source: PoolSource
    dynamics: str = "stationary"
    horizon: int = FULL_HORIZON
    changepoints: tuple[int, ...] = ()  # abrupt steps, or gradual window starts
    gradual_duration: int = FULL_GRADUAL_DURATION
    policies: tuple[PolicySpec, ...] = ()
    num_runs: int = FULL_RUNS
    base_seed: int = 0
    record_stride: int = 100
    dataset: str = ""

    def schedule(self):
        if self.dynamics == "stationary":
            return []
        if self.dynamics == "abrupt":
            return abrupt_schedule(self.changepoints)
        return gradual_schedule(self.changepoints, self.gradual_duration)

    def validate(self) -> None:
        if self.dynamics not in DYNAMICS:
            raise ConfigurationError(f"{self.name}: unknown dynamics {self.dynamics!r}")
        if self.horizon < 1 or self.num_runs < 1 or self.record_stride < 1:
            raise ConfigurationError(f"{self.name}: horizon, num_runs and record_stride must be >= 1")
        cps = list(self.changepoints)
        if self.dynamics == "stationary" and cps:
            raise ConfigurationError(f"{self.name}: stationary scenarios take no changepoints")
        if self.dynamics != "stationary" and not cps:
            raise ConfigurationError(f"{self.name}: {self.dynamics} scenario needs changepoints")
        if any(b <= a for a, b in zip(cps, cps[1:])) or any(not 1 <= c < self.horizon for c in cps):
            raise ConfigurationError(f"{self.name}: changepoints must be strictly ascending within 1..T-1")
        # building the environment checks windows against each other and T
        Environment(self.source.arm_pools, self.horizon, self.schedule())
        for p in self.policies:
            if p.kind == "fixed" and not 0 <= p.arm < len(self.source.arm_pools):
                raise ConfigurationError(f"{self.name}: fixed arm {p.arm} out of range")
            if p.uses_window:
                self.window_for(p)

    @property
    def num_changepoints(self) -> int:
        return len(self.changepoints)

    def window_for(self, spec: PolicySpec) -> int:
        """tau for a windowed policy: explicit, else round(c*T/N), else T when stationary."""
        if spec.tau is not None:
            return int(spec.tau)
        if self.num_changepoints == 0:
            return self.horizon
        return heuristic_window(self.horizon, self.num_changepoints, spec.c)

    def build_env(self, rng: np.random.Generator) -> Environment:
        return Environment(self.source.arm_pools, self.horizon, self.schedule(), rng)

    def record_steps(self) -> list[int]:
        return Environment(self.source.arm_pools, self.horizon, self.schedule()).record_steps(self.record_stride)


def make_policy(spec: PolicySpec, env: Environment, scenario: ScenarioConfig) -> Policy:
    k = env.num_arms
    if spec.kind == "ucb1":
        return UCB1(k, spec.alpha)
    if spec.kind == "ducb":
        return DiscountedUCB(k, spec.alpha, spec.gamma)
    if spec.kind == "swucb":
        return SlidingWindowUCB(k, scenario.window_for(spec), spec.alpha)
    if spec.kind == "fdsw":
        return DualViewUCB(k, scenario.window_for(spec), spec.alpha, spec.gamma, spec.aggregation,
                           spec.alpha_window)
    if spec.kind == "fixed":
        return FixedArmPolicy(k, spec.arm)
    return OraclePolicy(env)


# ---------------------------------------------------------------- regret


def step_regret(oracle_mean: float, chosen_mean: float) -> float:
    r = oracle_mean - chosen_mean
    if r < 0:
        raise InvariantViolation(f"negative regret {r}: oracle mean {oracle_mean} < chosen {chosen_mean}")
    return r


def cumulative_regret(regrets) -> float:
    """Correctly rounded total of the per-step regrets."""
    return math.fsum(regrets)


@dataclass
class Trajectory:
    scenario: str
    policy: str
    run_index: int
    seed: int
    arms: np.ndarray
    rewards: np.ndarray
    oracle_means: np.ndarray
    chosen_means: np.ndarray
    record_steps: list[int] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.arms.size

    @property
    def regret(self) -> np.ndarray:
        return self.oracle_means - self.chosen_means

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def final_regret(self) -> float:
        return cumulative_regret(self.regret)

    def recorded(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(self.record_steps, dtype=int)
        return idx, self.cumulative[idx - 1]

    def write(self, path) -> None:
        r, R = self.regret, self.cumulative
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "arm", "reward", "oracle_mean", "chosen_mean", "r_t", "R_t"])
            for t in range(self.horizon):
                w.writerow([t + 1, int(self.arms[t]), repr(float(self.rewards[t])),
                            repr(float(self.oracle_means[t])), repr(float(self.chosen_means[t])),
                            repr(float(r[t])), repr(float(R[t]))])


def episode_seed(scenario: ScenarioConfig, spec: PolicySpec, run_index: int, shared_tape: bool = False) -> int:
    label = "shared-tape" if shared_tape else spec.label
    return derive_seed(scenario.base_seed, scenario.name, label, run_index)


def run_episode(scenario: ScenarioConfig, spec: PolicySpec, run_index: int, *,
                shared_tape: bool = False,
                inspect: Callable[[int, Policy], None] | None = None) -> Trajectory:
    """Play one seeded episode and record expected regret at every step.

    With ``shared_tape`` the reward stream ignores the policy, so policies
    that choose the same arms see the same rewards. ``inspect(t, policy)``
    is called before each selection.
    """
    scenario.validate()
    labels = (scenario.name, "shared-tape" if shared_tape else spec.label, run_index)
    env = scenario.build_env(stream(scenario.base_seed, *labels))
    policy = make_policy(spec, env, scenario)
    T = scenario.horizon
    arms = np.empty(T, dtype=np.int64)
    rewards = np.empty(T)
    best = np.empty(T)
    chosen = np.empty(T)
    last_m, last_best = None, 0.0
    for t in range(1, T + 1):
        m = env.means_at(t)
        if m is not last_m:
            last_m, last_best = m, float(m.max())
        if inspect is not None:
            inspect(t, policy)
        a = policy.select()
        r = env.sample_reward(a, t)
        policy.update(a, r)
        arms[t - 1] = a
        rewards[t - 1] = r
        best[t - 1] = last_best
        chosen[t - 1] = m[a]
    traj = Trajectory(scenario.name, spec.label, run_index, derive_seed(scenario.base_seed, *labels),
                      arms, rewards, best, chosen, env.record_steps(scenario.record_stride))
    if (traj.regret < 0).any():
        t = int(np.argmax(traj.regret < 0)) + 1
        step_regret(best[t - 1], chosen[t - 1])
    return traj


# ---------------------------------------------------------------- aggregation


@dataclass
class RunSummary:
    scenario: str
    policy: str
    steps: np.ndarray
    mean_curve: np.ndarray
    std_curve: np.ndarray
    finals: np.ndarray
    dataset: str = ""
    dynamics: str = ""

    @property
    def final_mean(self) -> float:
        return float(np.mean(self.finals))

    @property
    def final_std(self) -> float:
        return float(np.std(self.finals))


def aggregate_runs(trajectories: Sequence[Trajectory]) -> RunSummary:
    """Pointwise mean and population std of cumulative regret across runs."""
    if not trajectories:
        raise ConfigurationError("need at least one run to aggregate")
    steps = trajectories[0].record_steps
    for tr in trajectories[1:]:
        if tr.record_steps != steps:
            raise ConfigurationError("runs were recorded on different step grids")
    curves = np.vstack([tr.recorded()[1] for tr in trajectories])
    finals = np.array([tr.final_regret for tr in trajectories])
    first = trajectories[0]
    return RunSummary(first.scenario, first.policy, np.asarray(steps), curves.mean(0), curves.std(0), finals)


@dataclass(frozen=True)
class PhaseCheck:
    start: int
    end: int
    early_rate: float  # mean per-step regret over the first 2*tau steps
    late_rate: float  # mean per-step regret over the last quarter

    @property
    def flattened(self) -> bool:
        return self.late_rate <= 0.5 * self.early_rate


def staircase_phases(trajectories: Sequence[Trajectory], changepoints: Sequence[int],
                     tau: int) -> list[PhaseCheck]:
    """Regret flattening check for every post-changepoint phase longer than ``2*tau``.

    Per-step regret is averaged over runs first. A phase passes when its
    last-quarter rate is at most half the rate over the ``2*tau`` steps
    right after its changepoint. Shorter phases are skipped, so the result
    may be empty.
    """
    r = np.mean([tr.regret for tr in trajectories], axis=0)
    T = r.size
    bounds = list(changepoints) + [T + 1]
    out = []
    for start, nxt in zip(bounds, bounds[1:]):
        end = nxt - 1
        length = end - start + 1
        if length <= 2 * tau:
            continue
        early = r[start - 1:start - 1 + 2 * tau].mean()
        late = r[end - length // 4:end].mean()
        out.append(PhaseCheck(start, end, float(early), float(late)))
    return out


# ---------------------------------------------------------------- scenario matrix


def _scaled(x: int, scale: float) -> int:
    return max(1, int(round(x * scale)))


def default_sources(pool_size: int = 2000, seed: int = 0) -> dict[str, PoolSource]:
    """Dataset-free stand-ins: 9 rating-scale arms and 80 low-CTR click arms."""
    return {
        "ML": PoolSource("ML-synthetic", means=tuple(ingestion.movielens_like_means(9)),
                         support="ratings", pool_size=pool_size, seed=seed),
        "OBD": PoolSource("OBD-synthetic", means=tuple(ingestion.obd_like_means(80, seed)),
                          support="bernoulli", pool_size=10 * pool_size, seed=seed),
    }


def scenario_matrix(scale: float = 1.0, sources: dict[str, PoolSource] | None = None,
                    policies: Sequence[PolicySpec] | None = None, num_runs: int = FULL_RUNS,
                    base_seed: int = 0, record_stride: int = 100,
                    horizon: int = FULL_HORIZON,
                    changepoints: Sequence[int] = FULL_CHANGEPOINTS,
                    gradual_starts: Sequence[int] = FULL_GRADUAL_STARTS,
                    gradual_duration: int = FULL_GRADUAL_DURATION,
                    window_changepoints: int | None = len(FULL_CHANGEPOINTS),
                    dynamics: Sequence[str] = DYNAMICS) -> list[ScenarioConfig]:
    """Datasets x dynamics scenarios; times are multiplied by ``scale``.

    When ``window_changepoints`` is set, windowed policies without an
    explicit tau get ``round(c*T/window_changepoints)`` in every scenario,
    so one configuration per policy runs across the whole row of the table.
    Set it to ``None`` to size the window per scenario instead.
    """
    sources = sources or default_sources()
    T = _scaled(horizon, scale)
    cps = tuple(_scaled(c, scale) for c in changepoints)
    starts = tuple(_scaled(c, scale) for c in gradual_starts)
    dur = _scaled(gradual_duration, scale)
    specs = list(policies) if policies is not None else list(policy_specs())
    if window_changepoints:
        specs = [replace(p, tau=heuristic_window(T, window_changepoints, p.c))
                 if p.uses_window and p.tau is None else p for p in specs]
    out = []
    for ds, src in sources.items():
        for dyn in dynamics:
            out.append(ScenarioConfig(
                name=f"{ds}-{dyn.capitalize()}", source=src, dynamics=dyn, horizon=T,
                changepoints={"stationary": (), "abrupt": cps, "gradual": starts}[dyn],
                gradual_duration=dur, policies=tuple(specs), num_runs=num_runs,
                base_seed=base_seed, record_stride=record_stride, dataset=ds))
    return out


def desk_matrix(**kw) -> list[ScenarioConfig]:
    return scenario_matrix(scale=DESK_SCALE, **kw)


# ---------------------------------------------------------------- execution


def _episode_task(args):
    scenario, spec, run = args
    return run_episode(scenario, spec, run)


def run_matrix(scenarios: Sequence[ScenarioConfig], workers: int = 1,
               keep_trajectories: bool = False):
    """Run every (scenario, policy, run) episode and aggregate per (scenario, policy).

    Returns ``(summaries, trajectories)``; trajectories is empty unless
    ``keep_trajectories``. Ordering follows the input regardless of
    ``workers``.
    """
    for sc in scenarios:
        sc.validate()
    tasks = [(sc, p, r) for sc in scenarios for p in sc.policies for r in range(sc.num_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_episode_task, tasks, chunksize=1))
    else:
        results = [_episode_task(t) for t in tasks]
    summaries, trajs, i = [], [], 0
    for sc in scenarios:
        for p in sc.policies:
            chunk = results[i:i + sc.num_runs]
            i += sc.num_runs
            s = aggregate_runs(chunk)
            s.dataset, s.dynamics = sc.dataset, sc.dynamics
            summaries.append(s)
            if keep_trajectories:
                trajs.extend(chunk)
    return summaries, trajs


def seed_table(scenarios: Sequence[ScenarioConfig]) -> list[tuple[str, str, int, int]]:
    return [(sc.name, p.label, r, episode_seed(sc, p, r))
            for sc in scenarios for p in sc.policies for r in range(sc.num_runs)]


# ---------------------------------------------------------------- writers


def _fmt(x: float) -> str:
    return repr(float(x))


def format_cell(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def curve_filename(scenario: str) -> str:
    return f"curves_{scenario}.csv"


def write_curves(out_dir, summaries: Sequence[RunSummary]) -> list[Path]:
    out_dir = Path(out_dir)
    by_scenario: dict[str, list[RunSummary]] = {}
    for s in summaries:
        by_scenario.setdefault(s.scenario, []).append(s)
    paths = []
    for name, group in by_scenario.items():
        p = out_dir / curve_filename(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "policy", "t", "mean_cum_regret", "std_cum_regret"])
            for s in group:
                for t, m, sd in zip(s.steps.tolist(), s.mean_curve, s.std_curve):
                    w.writerow([name, s.policy, t, _fmt(m), _fmt(sd)])
        paths.append(p)
    return paths


SUMMARY_FILE = "summary.csv"


def write_summary(path, summaries: Sequence[RunSummary]) -> None:
    """Table-shaped summary: one row per (dataset, policy), one cell group per dynamics."""
    dyns = [d for d in DYNAMICS if any(s.dynamics == d for s in summaries)]
    rows: dict[tuple[str, str], dict[str, RunSummary]] = {}
    for s in summaries:
        rows.setdefault((s.dataset, s.policy), {})[s.dynamics] = s
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["dataset", "policy"]
        for d in dyns:
            header += [d, f"{d}_mean", f"{d}_std"]
        w.writerow(header)
        for (ds, pol), cells in rows.items():
            row = [ds, pol]
            for d in dyns:
                s = cells.get(d)
                row += ["", "", ""] if s is None else [format_cell(s.final_mean, s.final_std),
                                                        _fmt(s.final_mean), _fmt(s.final_std)]
            w.writerow(row)


def write_seeds(path, scenarios: Sequence[ScenarioConfig]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "policy", "run", "seed"])
        w.writerows(seed_table(scenarios))


def write_trajectories(out_dir, trajectories: Sequence[Trajectory]) -> None:
    d = Path(out_dir) / "trajectories"
    os.makedirs(d, exist_ok=True)
    for tr in trajectories:
        safe = tr.policy.replace(" ", "").replace("(", "-").replace(")", "")
        tr.write(d / f"{tr.scenario}__{safe}__run{tr.run_index}.csv")
