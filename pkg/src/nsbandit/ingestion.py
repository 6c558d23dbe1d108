"""Arm reward pools from rating logs, click logs, or synthetic targets.

MovieLens-style logs become arms by clustering users on (age, gender,
occupation) and pooling every rating given by each cluster. OBD-style
click logs map one item to one Bernoulli arm. ``synth_env`` builds pools
with prescribed means when no dataset is at hand.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from nsbandit.environment import RewardPool
from nsbandit.errors import ConfigurationError, ParseError

log = logging.getLogger(__name__)

RATING_SUPPORT = (1.0, 5.0)
CLICK_SUPPORT = (0.0, 1.0)
# MovieLens-1M documents occupations 0..20 and age codes {1,18,25,35,45,50,56}
OCCUPATION_CODES = tuple(range(21))
AGE_CODES = (1, 18, 25, 35, 45, 50, 56)
MALFORMED_LIMIT = 0.01


class UserRecord(NamedTuple):
    user_id: int
    gender: str
    age_code: int
    occupation_code: int


class RatingRecord(NamedTuple):
    user_id: int
    item_id: int
    rating: int


@dataclass
class RatingTable:
    """Column store for ratings; iterating yields ``RatingRecord``."""

    user_id: np.ndarray
    item_id: np.ndarray
    rating: np.ndarray

    def __len__(self):
        return self.user_id.size

    def __iter__(self) -> Iterator[RatingRecord]:
        for u, i, r in zip(self.user_id.tolist(), self.item_id.tolist(), self.rating.tolist()):
            yield RatingRecord(u, i, r)


@dataclass
class MovieLensLog:
    users: list[UserRecord]
    ratings: RatingTable
    malformed_user_lines: int = 0
    malformed_rating_lines: int = 0
    orphan_ratings: int = 0


def _lines(source) -> Iterator[tuple[int, str]]:
    if isinstance(source, (str, os.PathLike)):
        fh = open(source, encoding="latin-1")
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        fh = source
    else:
        fh = iter(source)
    try:
        for no, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                yield no, line
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()


def _source_name(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        return os.fspath(source)
    return getattr(source, "name", "<input>")


def _parse_users(source) -> tuple[list[UserRecord], list[int], int]:
    users, bad, total, seen = [], [], 0, set()
    for no, line in _lines(source):
        total += 1
        parts = line.split("::")
        try:
            if len(parts) != 5 or parts[1] not in ("M", "F"):
                raise ValueError
            rec = UserRecord(int(parts[0]), parts[1], int(parts[2]), int(parts[3]))
            if rec.user_id in seen or rec.occupation_code not in OCCUPATION_CODES:
                raise ValueError
        except ValueError:
            bad.append(no)
            log.debug("malformed user line %d: %r", no, line)
            continue
        seen.add(rec.user_id)
        users.append(rec)
    return users, bad, total


def _parse_ratings(source) -> tuple[list[tuple[int, int, int]], list[int], int]:
    rows, bad, total = [], [], 0
    for no, line in _lines(source):
        total += 1
        parts = line.split("::")
        try:
            if len(parts) != 4:
                raise ValueError
            u, i, r = int(parts[0]), int(parts[1]), int(parts[2])
            int(parts[3])
            if not 1 <= r <= 5:
                raise ValueError
        except ValueError:
            bad.append(no)
            log.debug("malformed rating line %d: %r", no, line)
            continue
        rows.append((u, i, r))
    return rows, bad, total


def _check_malformed(bad: list[int], total: int, what: str, source) -> None:
    where = _source_name(source)
    if total and len(bad) / total > MALFORMED_LIMIT:
        raise ParseError(f"{where}: {len(bad)} of {total} {what} lines are malformed "
                         f"(first at line {bad[0]}); is this the right file?")
    if bad:
        log.warning("%s: skipped %d malformed %s lines (first at line %d)", where, len(bad), what, bad[0])


def parse_movielens(users_source, ratings_source) -> MovieLensLog:
    """Parse ``::``-delimited users and ratings files (paths, handles or line iterables).

    Ratings whose user is missing from the user table are dropped and
    counted. More than 1% malformed lines in either source raises
    ``ParseError``.
    """
    users, bad_u, tot_u = _parse_users(users_source)
    _check_malformed(bad_u, tot_u, "user", users_source)
    rows, bad_r, tot_r = _parse_ratings(ratings_source)
    _check_malformed(bad_r, tot_r, "rating", ratings_source)
    known = {u.user_id for u in users}
    kept = [r for r in rows if r[0] in known]
    orphans = len(rows) - len(kept)
    if orphans:
        log.warning("dropped %d ratings from users not in the user table", orphans)
    arr = np.array(kept, dtype=np.int64).reshape(-1, 3)
    table = RatingTable(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())
    return MovieLensLog(users, table, len(bad_u), len(bad_r), orphans)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    user_ids: list[int]
    columns: list[str]
    age_mean: float
    age_std: float


def encode_features(users: Sequence[UserRecord]) -> FeatureMatrix:
    """Standardized age, gender as 0/1 (F=0, M=1), one-hot occupation 0..20."""
    if not users:
        raise ConfigurationError("cannot encode an empty user set")
    age = np.array([u.age_code for u in users], dtype=float)
    mu, sd = float(age.mean()), float(age.std())
    if sd == 0:
        sd = 1.0
    occ = np.zeros((len(users), len(OCCUPATION_CODES)))
    occ[np.arange(len(users)), [OCCUPATION_CODES.index(u.occupation_code) for u in users]] = 1.0
    gender = np.array([1.0 if u.gender == "M" else 0.0 for u in users])
    X = np.column_stack([(age - mu) / sd, gender, occ])
    cols = ["age_std", "gender_m"] + [f"occupation_{c}" for c in OCCUPATION_CODES]
    return FeatureMatrix(X, [u.user_id for u in users], cols, mu, sd)


# ---------------------------------------------------------------- k-means


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    sse: float
    history: list[float] = field(default_factory=list)  # SSE after each Lloyd iteration
    n_iter: int = 0


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _sse(X, C, labels) -> float:
    diff = X - C[labels]
    return float((diff * diff).sum())


def _kmeanspp(U: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over distinct points; never picks a point twice."""
    idx = [int(rng.integers(U.shape[0]))]
    d2 = ((U - U[idx[0]]) ** 2).sum(1)
    for _ in range(1, k):
        p = d2 / d2.sum()
        j = int(rng.choice(U.shape[0], p=p))
        idx.append(j)
        d2 = np.minimum(d2, ((U - U[j]) ** 2).sum(1))
    return U[idx].copy()


def lloyd(X: np.ndarray, init: np.ndarray, max_iter: int = 300) -> ClusterModel:
    """Lloyd iterations from ``init`` until assignments stop changing.

    A centroid that loses all its points is moved onto the point currently
    farthest from its own centroid.
    """
    C = np.array(init, dtype=float, copy=True)
    k = C.shape[0]
    labels = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        new = np.argmin(_sq_dists(X, C), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                C[j] = X[labels == j].mean(0)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(((X - C[labels]) ** 2).sum(1)))
            C[j] = X[far]
            labels[far] = j
        history.append(_sse(X, C, labels))
    labels = np.argmin(_sq_dists(X, C), axis=1) if labels is None else labels
    return ClusterModel(k, C, labels, _sse(X, C, labels), history, it)


def kmeans(points, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           extra_inits: Sequence[np.ndarray] = ()) -> ClusterModel:
    """Best-of-``restarts`` Lloyd K-Means with k-means++ seeding.

    The winner is the lowest SSE, ties broken by candidate order (the
    ``extra_inits`` come after the random restarts).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    U = np.unique(X, axis=0)
    if not 1 <= k <= U.shape[0]:
        raise ConfigurationError(f"K={k} but only {U.shape[0]} distinct points")
    if restarts < 1:
        raise ConfigurationError("restarts must be >= 1")
    ss = np.random.SeedSequence(seed)
    inits = [_kmeanspp(U, k, np.random.default_rng(s)) for s in ss.spawn(restarts)]
    inits += [np.asarray(c, dtype=float) for c in extra_inits]
    best = None
    for init in inits:
        m = lloyd(X, init, max_iter)
        if best is None or m.sse < best.sse:
            best = m
    return best


def _split_init(X: np.ndarray, model: ClusterModel) -> np.ndarray:
    """Previous centroids plus a copy of the worst cluster's centroid, nudged
    halfway toward that cluster's farthest member."""
    C = model.centroids
    per = np.bincount(model.assignments, weights=((X - C[model.assignments]) ** 2).sum(1), minlength=model.k)
    j = int(np.argmax(per))
    members = np.flatnonzero(model.assignments == j)
    far = members[int(np.argmax(((X[members] - C[j]) ** 2).sum(1)))]
    return np.vstack([C, (C[j] + X[far]) / 2.0])


def sse_curve(points, k_range: Iterable[int], seed: int = 0, restarts: int = 10,
              max_iter: int = 300) -> list[tuple[int, float]]:
    """SSE per K for an elbow plot. Non-increasing in K by construction:
    each K also tries the previous K's solution with one centroid split."""
    X = np.asarray(points, dtype=float)
    ks = list(k_range)
    if not ks or ks != sorted(set(ks)):
        raise ConfigurationError("K range must be nonempty and strictly ascending")
    out, prev = [], None
    for k in ks:
        extra = [_split_init(X, prev)] if prev is not None and prev.k == k - 1 else []
        m = kmeans(X, k, seed=seed + k, restarts=restarts, max_iter=max_iter, extra_inits=extra)
        out.append((k, m.sse))
        prev = m
    return out


def build_movielens_arms(user_ids: Sequence[int], assignments: Sequence[int], k: int,
                         ratings: RatingTable) -> list[RewardPool]:
    """One pool per cluster holding every rating its users gave."""
    lookup = dict(zip(map(int, user_ids), map(int, assignments)))
    try:
        cluster = np.fromiter((lookup[u] for u in ratings.user_id.tolist()), dtype=np.int64,
                              count=len(ratings))
    except KeyError as e:
        raise ConfigurationError(f"rating from user {e.args[0]} with no cluster assignment") from None
    pools = []
    for a in range(k):
        vals = ratings.rating[cluster == a]
        if vals.size == 0:
            raise ConfigurationError(f"cluster {a} has no ratings; re-cluster with a different K or seed")
        pools.append(RewardPool(vals.astype(float), RATING_SUPPORT, f"cluster-{a}"))
    return pools


@dataclass
class ObdArms:
    pools: list[RewardPool]
    item_ids: list[str]


def parse_obd(source, item_column: str = "item_id", click_column: str = "click",
              expected_items: int | None = 80, strict: bool = False) -> ObdArms:
    """Comma-delimited click log with a header row -> one Bernoulli pool per item.

    Arms are numbered by ascending item id (numerically when every id is an
    integer).
    """
    opened = isinstance(source, (str, os.PathLike))
    fh = open(source, newline="") if opened else source
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or item_column not in reader.fieldnames \
                or click_column not in reader.fieldnames:
            raise ParseError(f"{_source_name(source)}: click log needs columns {item_column!r} and {click_column!r}")
        clicks: dict[str, list[float]] = {}
        for no, row in enumerate(reader, 2):
            c = row[click_column].strip()
            if c not in ("0", "1"):
                raise ParseError(f"{_source_name(source)} line {no}: click value {c!r} is not 0/1")
            clicks.setdefault(row[item_column].strip(), []).append(float(c))
    finally:
        if opened:
            fh.close()
    ids = list(clicks)
    if all(i.lstrip("-").isdigit() for i in ids):
        ids.sort(key=int)
    else:
        ids.sort()
    if expected_items is not None and len(ids) != expected_items:
        msg = f"click log has {len(ids)} items, expected {expected_items}"
        if strict:
            raise ParseError(msg)
        log.warning(msg)
    pools = [RewardPool(np.array(clicks[i]), CLICK_SUPPORT, f"item-{i}") for i in ids]
    return ObdArms(pools, ids)


# ---------------------------------------------------------------- synthetic pools

# overall MovieLens-1M rating shares for 1..5 stars, used as the base shape
_RATING_SHAPE = np.array([0.056, 0.108, 0.261, 0.349, 0.226])


def _tilted_shares(target: float) -> np.ndarray:
    """Exponentially tilt the base rating shape until its mean hits ``target``."""
    stars = np.arange(1, 6)
    lo, hi = -30.0, 30.0
    for _ in range(200):
        th = (lo + hi) / 2
        w = _RATING_SHAPE * np.exp(th * (stars - 3))
        w /= w.sum()
        if w @ stars < target:
            lo = th
        else:
            hi = th
    return w


def _rating_pool(target: float, size: int, rng: np.random.Generator) -> np.ndarray:
    total = int(round(target * size))
    shares = _tilted_shares(target) * size
    counts = np.floor(shares).astype(int)
    rem = size - counts.sum()
    counts[np.argsort(-(shares - counts), kind="stable")[:rem]] += 1
    vals = np.repeat(np.arange(1, 6), counts)
    # move single ratings by one star until the sum is exact
    diff = total - int(vals.sum())
    step = 1 if diff > 0 else -1
    i = 0
    order = np.argsort(vals, kind="stable")
    if step < 0:
        order = order[::-1]
    while diff != 0:
        j = order[i % size]
        if 1 <= vals[j] + step <= 5:
            vals[j] += step
            diff -= step
        i += 1
    rng.shuffle(vals)
    return vals.astype(float)


def synth_env(means: Sequence[float], support: str = "bernoulli", pool_size: int = 1000,
              seed: int = 0) -> list[RewardPool]:
    """Pools whose empirical means sit strictly within ``1/(2*pool_size)`` of
    the targets.

    ``support`` is ``"bernoulli"`` (0/1 samples, exactly ``round(mean*size)``
    ones) or ``"ratings"`` (integer stars 1..5 shaped like real ratings).
    """
    if pool_size < 1:
        raise ConfigurationError("pool_size must be >= 1")
    if support not in ("bernoulli", "ratings"):
        raise ConfigurationError(f"unknown support {support!r}")
    lo, hi = CLICK_SUPPORT if support == "bernoulli" else RATING_SUPPORT
    rng = np.random.default_rng(seed)
    pools = []
    for a, m in enumerate(means):
        m = float(m)
        if not lo <= m <= hi:
            raise ConfigurationError(f"target mean {m} outside support [{lo}, {hi}]")
        scaled = m * pool_size
        # a target exactly between two reachable means cannot be met strictly
        if abs(abs(scaled - np.floor(scaled)) - 0.5) < 1e-9:
            raise ConfigurationError(f"mean {m} is unreachable with pool size {pool_size}")
        if support == "bernoulli":
            ones = int(round(scaled))
            vals = np.zeros(pool_size)
            vals[:ones] = 1.0
            rng.shuffle(vals)
        else:
            vals = _rating_pool(m, pool_size, rng)
        pools.append(RewardPool(vals, (lo, hi), f"synthetic-{a}"))
    return pools


def movielens_like_means(num_arms: int = 9) -> list[float]:
    """Cluster-level mean ratings spread like the real user clusters (about 3.4 to 3.9)."""
    return [round(v, 3) for v in np.linspace(3.40, 3.90, num_arms)]


def obd_like_means(num_arms: int = 80, seed: int = 0) -> list[float]:
    """Low click-through rates, 0.1% to 1.5%, drawn once from a fixed seed."""
    rng = np.random.default_rng(seed)
    return [round(float(v), 4) for v in np.sort(rng.uniform(0.001, 0.015, num_arms))[::-1]]


def write_arm_metadata(path, pools: Sequence[RewardPool]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm_id", "source", "pool_size", "pool_mean"])
        for a, p in enumerate(pools):
            w.writerow([a, p.label, len(p), repr(p.mean)])
