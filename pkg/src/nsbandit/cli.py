"""Command-line entry point: cluster, validate-drift, run, report.

Exit codes: 0 success, 1 validation or invariant failure, 2 I/O or parse
failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from nsbandit import ingestion
from nsbandit.config import Config, load_config, write_resolved
from nsbandit.environment import check_drift, write_mean_trajectories
from nsbandit.errors import ConfigurationError, InvariantViolation, ParseError
from nsbandit.experiment import (
    DYNAMICS, SUMMARY_FILE, PoolSource, curve_filename, default_sources, policy_specs, run_matrix,
    scenario_matrix, seed_table, write_curves, write_seeds, write_summary, write_trajectories,
)

log = logging.getLogger("nsbandit")

RESOLVED_FILE = "resolved_config.ini"
ELBOW_FILE = "elbow.csv"
ASSIGNMENT_FILE = "assignments.csv"
ARMS_FILE = "arms.csv"
REPORT_FILE = "report.txt"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- data sources


def _movielens(cfg: Config):
    users = cfg.get("data", "movielens_users").strip()
    ratings = cfg.get("data", "movielens_ratings").strip()
    if not users or not ratings:
        return None
    return ingestion.parse_movielens(users, ratings)


def _cluster(cfg: Config, ml, k: int):
    feats = ingestion.encode_features(ml.users)
    model = ingestion.kmeans(feats.values, k, seed=cfg.int("cluster", "seed"),
                             restarts=cfg.int("cluster", "restarts"),
                             max_iter=cfg.int("cluster", "max_iter"))
    return feats, model


def build_sources(cfg: Config) -> dict[str, PoolSource]:
    """Real logs where paths are configured, synthetic stand-ins otherwise."""
    synth = default_sources(cfg.int("data", "synthetic_pool_size"), cfg.int("data", "synthetic_seed"))
    sources = {}
    for ds in cfg.list("experiment", "datasets"):
        if ds == "ML":
            ml = _movielens(cfg)
            if ml is None:
                sources[ds] = synth[ds]
                continue
            k = cfg.int("cluster", "k")
            feats, model = _cluster(cfg, ml, k)
            pools = ingestion.build_movielens_arms(feats.user_ids, model.assignments, k, ml.ratings)
            sources[ds] = PoolSource("ML", pools=tuple(pools))
        elif ds == "OBD":
            path = cfg.get("data", "obd_log").strip()
            if not path:
                sources[ds] = synth[ds]
                continue
            expected = cfg.optional_int("data", "obd_expected_items")
            arms = ingestion.parse_obd(path, cfg.get("data", "obd_item_column"),
                                       cfg.get("data", "obd_click_column"), expected,
                                       cfg.bool("data", "obd_strict"))
            sources[ds] = PoolSource("OBD", pools=tuple(arms.pools))
        else:
            raise ConfigurationError(f"experiment.datasets: unknown dataset {ds!r} (use ML, OBD)")
    return sources


def build_scenarios(cfg: Config, policies: list[str] | None = None, scenarios: list[str] | None = None):
    dyn = cfg.list("experiment", "dynamics")
    unknown = set(dyn) - set(DYNAMICS)
    if unknown:
        raise ConfigurationError(f"experiment.dynamics: unknown {sorted(unknown)}")
    params = dict(alpha=cfg.float("policies", "alpha"), gamma=cfg.float("policies", "gamma"),
                  c=cfg.float("policies", "c"), tau=cfg.optional_int("policies", "tau"))
    specs = policy_specs(policies or cfg.list("policies", "names"), **params)
    wcp = cfg.int("policies", "window_changepoints")
    matrix = scenario_matrix(
        scale=cfg.float("experiment", "scale"), sources=build_sources(cfg), policies=specs,
        num_runs=cfg.int("experiment", "num_runs"), base_seed=cfg.int("experiment", "base_seed"),
        record_stride=cfg.int("experiment", "record_stride"), horizon=cfg.int("experiment", "horizon"),
        changepoints=cfg.ints("experiment", "changepoints"),
        gradual_starts=cfg.ints("experiment", "gradual_starts"),
        gradual_duration=cfg.int("experiment", "gradual_duration"),
        window_changepoints=wcp if wcp > 0 else None, dynamics=dyn)
    if scenarios:
        names = {sc.name for sc in matrix}
        missing = [s for s in scenarios if s not in names]
        if missing:
            raise ConfigurationError(f"unknown scenario(s) {missing}; available: {sorted(names)}")
        matrix = [sc for sc in matrix if sc.name in scenarios]
    return matrix


# ---------------------------------------------------------------- commands


def cmd_cluster(cfg: Config, out: Path) -> int:
    ml = _movielens(cfg)
    if ml is None:
        raise ConfigurationError("cluster needs data.movielens_users and data.movielens_ratings")
    feats = ingestion.encode_features(ml.users)
    k_range = range(cfg.int("cluster", "k_min"), cfg.int("cluster", "k_max") + 1)
    curve = ingestion.sse_curve(feats.values, k_range, seed=cfg.int("cluster", "seed"),
                                restarts=cfg.int("cluster", "restarts"),
                                max_iter=cfg.int("cluster", "max_iter"))
    with open(out / ELBOW_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "sse"])
        w.writerows((k, repr(float(s))) for k, s in curve)
    k = cfg.int("cluster", "k")
    _, model = _cluster(cfg, ml, k)
    with open(out / ASSIGNMENT_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "cluster"])
        w.writerows(zip(feats.user_ids, model.assignments.tolist()))
    pools = ingestion.build_movielens_arms(feats.user_ids, model.assignments, k, ml.ratings)
    ingestion.write_arm_metadata(out / ARMS_FILE, pools)
    print(f"clustered {len(ml.users)} users into {k} groups; elbow over K={k_range.start}..{k_range.stop - 1}")
    return 0


def cmd_validate_drift(cfg: Config, out: Path, scenarios=None) -> int:
    stride = cfg.int("drift", "stride")
    failures = 0
    for sc in build_scenarios(cfg, scenarios=scenarios):
        sc.validate()
        env = sc.build_env(np.random.default_rng(0))
        write_mean_trajectories(out / f"drift_{sc.name}.csv", env.export_mean_trajectories(stride))
        bad = check_drift(env)
        for v in bad[:20]:
            print(f"{sc.name}: t={v.t} arm={v.arm}: {v.message}", file=sys.stderr)
        failures += bool(bad)
        print(f"{sc.name}: {'FAIL' if bad else 'ok'}")
    return 1 if failures else 0


def cmd_run(cfg: Config, out: Path, policies=None, scenarios=None, workers=None, trajectories=None) -> int:
    matrix = build_scenarios(cfg, policies, scenarios)
    for sc in matrix:  # abort before any episode starts
        sc.validate()
    write_seeds(out / "seeds.csv", matrix)
    for name, pol, run, seed in seed_table(matrix):
        print(f"seed {name} {pol} run={run} {seed}")
    keep = cfg.bool("experiment", "trajectories") if trajectories is None else trajectories
    summaries, trajs = run_matrix(matrix, workers or cfg.int("experiment", "workers"), keep)
    write_curves(out, summaries)
    write_summary(out / SUMMARY_FILE, summaries)
    if keep:
        write_trajectories(out, trajs)
    n = sum(len(sc.policies) * sc.num_runs for sc in matrix)
    print(f"{n} episodes over {len(matrix)} scenarios written to {out}")
    return 0


def _read_csv(path: Path) -> list[dict[str, str]]:
    if not path.is_file():
        raise CliError(f"missing {path.name} in {path.parent}; run `nsbandit run -o {path.parent}` first", 2)
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_table(rows: list[dict[str, str]]) -> str:
    dyns = [d for d in DYNAMICS if rows and d in rows[0]]
    header = ["dataset", "policy"] + dyns
    body = [[r["dataset"], r["policy"]] + [r[d] for d in dyns] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = []
    for i, row in enumerate([header] + body):
        cells = [c.ljust(w) if j < 2 else c.rjust(w) for j, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def plot_series(curve_rows: list[dict[str, str]]) -> tuple[list[str], list[list[str]]]:
    """Long curve rows to wide: one mean and one std column per policy."""
    policies = list(dict.fromkeys(r["policy"] for r in curve_rows))
    by_t: dict[int, dict[str, tuple[str, str]]] = {}
    for r in curve_rows:
        by_t.setdefault(int(r["t"]), {})[r["policy"]] = (r["mean_cum_regret"], r["std_cum_regret"])
    header = ["t"] + [f"{p} {stat}" for p in policies for stat in ("mean", "std")]
    rows = []
    for t in sorted(by_t):
        row = [str(t)]
        for p in policies:
            row += list(by_t[t].get(p, ("", "")))
        rows.append(row)
    return header, rows


def cmd_report(run_dir: Path) -> int:
    if not run_dir.is_dir():
        raise CliError(f"run directory {run_dir} does not exist", 2)
    rows = _read_csv(run_dir / SUMMARY_FILE)
    scenarios = list(dict.fromkeys(f"{r['dataset']}-{d.capitalize()}" for r in rows
                                   for d in DYNAMICS if r.get(d)))
    for name in scenarios:
        header, series = plot_series(_read_csv(run_dir / curve_filename(name)))
        with open(run_dir / f"plot_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(series)
    table = render_table(rows)
    (run_dir / REPORT_FILE).write_text(table)
    print(table, end="")
    return 0


# ---------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nsbandit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-c", "--config", type=Path, help="INI config file")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("-o", "--output-dir", type=Path, default=Path("."), help="where outputs go")

    common(sub.add_parser("cluster", help="elbow table and cluster assignments for MovieLens users"))
    vd = sub.add_parser("validate-drift", help="export true-mean trajectories and check drift invariants")
    common(vd)
    vd.add_argument("--scenarios", type=lambda s: s.split(","), help="comma-separated scenario names")
    run = sub.add_parser("run", help="run the scenario x policy x seed matrix")
    common(run)
    run.add_argument("--policies", type=lambda s: s.split(","), help="comma-separated, e.g. ucb1,fdsw-max")
    run.add_argument("--scenarios", type=lambda s: s.split(","), help="comma-separated, e.g. ML-Abrupt")
    run.add_argument("--workers", type=int, help="parallel episode workers")
    run.add_argument("--trajectories", action="store_true", default=None, help="also write per-episode files")
    rep = sub.add_parser("report", help="render a finished run directory")
    rep.add_argument("run_dir", type=Path)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.run_dir)
        cfg = load_config(args.config, args.overrides)
        out = args.output_dir
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out / RESOLVED_FILE)
        if args.command == "cluster":
            return cmd_cluster(cfg, out)
        if args.command == "validate-drift":
            return cmd_validate_drift(cfg, out, args.scenarios)
        return cmd_run(cfg, out, args.policies, args.scenarios, args.workers, args.trajectories)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except (ConfigurationError, InvariantViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ParseError, OSError, UnicodeDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
