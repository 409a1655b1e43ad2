"""Exact and threshold-first solvers for random subset-sum approximation.

Both solvers enumerate exhaustively (the problem sizes here are small by
design) and are fully deterministic, including tie-breaking.  The canonical
value of a subset is math.fsum over its members in index order, so achieved
errors are reproducible bit-exactly from (values, indices).
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import DomainError, ShapeMismatchError

M_GUARD = 30
_TABLE_BITS = 22  # direct doubling table up to here; split above

UNIFORM = "uniform"
PRODUCT = "product"
SIGNED_PRODUCT = "signed_product"
DIST_KINDS = (UNIFORM, PRODUCT, SIGNED_PRODUCT)

OPTIMAL = "optimal"
THRESHOLD = "threshold"


@dataclass(frozen=True)
class BaseDistribution:
    """Distribution of the base random values.

    uniform: U[-1,1]; product: U[-1,1]*U[-1,1]; signed_product:
    U[0,1]*U[-1,1] (identically distributed to its mirrored variant).
    """

    kind: str = UNIFORM

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise DomainError("unknown distribution kind %r" % (self.kind,))

    def draw(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == UNIFORM:
            return rng.uniform(-1.0, 1.0, m)
        if self.kind == PRODUCT:
            return rng.uniform(-1.0, 1.0, m) * rng.uniform(-1.0, 1.0, m)
        return rng.uniform(0.0, 1.0, m) * rng.uniform(-1.0, 1.0, m)


@dataclass(frozen=True)
class SubsetSumProblem:
    values: np.ndarray
    target: float
    tolerance: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", values)
        if values.size > M_GUARD:
            raise DomainError(
                "base set size %d exceeds the exhaustive-enumeration guard %d"
                % (values.size, M_GUARD)
            )
        if not np.all(np.isfinite(values)) or not math.isfinite(self.target):
            raise DomainError("values and target must be finite")
        if self.tolerance < 0:
            raise DomainError("tolerance must be >= 0")

    @property
    def m(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SubsetSumSolution:
    indices: Tuple[int, ...]
    achieved_error: float
    evaluated_subsets: int


def subset_value(values, indices) -> float:
    """Canonical (correctly rounded) sum of the selected values."""
    values = np.asarray(values, dtype=np.float64)
    return math.fsum(values[i] for i in indices)


def _mask_indices(mask: int) -> Tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _sum_table(values: np.ndarray) -> np.ndarray:
    """All 2^m subset sums; index bit i corresponds to values[i]."""
    m = values.size
    out = np.empty(2**m)
    out[0] = 0.0
    size = 1
    for v in values:
        out[size : 2 * size] = out[:size] + v
        size *= 2
    return out


def _solution_key(problem: SubsetSumProblem, mask: int):
    idx = _mask_indices(mask)
    err = abs(problem.target - subset_value(problem.values, idx))
    return (err, len(idx), idx)


def _error_margin(problem: SubsetSumProblem) -> float:
    return 1e-12 * (1.0 + np.abs(problem.values).sum() + abs(problem.target))


def solve_optimal(problem: SubsetSumProblem) -> SubsetSumSolution:
    """Exhaustive best-subset search.

    Ties on achieved error break toward smaller cardinality, then the
    lexicographically smallest index set.  The float table is used only to
    preselect candidates; the winner is decided on canonical fsum errors.
    """
    m = problem.m
    margin = _error_margin(problem)
    best_key = None
    if m <= _TABLE_BITS:
        errs = np.abs(_sum_table(problem.values) - problem.target)
        window = errs.min() + margin
        for mask in np.flatnonzero(errs <= window):
            key = _solution_key(problem, int(mask))
            if best_key is None or key < best_key:
                best_key = key
    else:
        low_bits = _TABLE_BITS
        low_table = _sum_table(problem.values[:low_bits])
        high_values = problem.values[low_bits:]
        window = None
        cands = []
        for high in range(2 ** (m - low_bits)):
            base = subset_value(high_values, _mask_indices(high))
            errs = np.abs(low_table + base - problem.target)
            lo = errs.min()
            if window is None or lo < window:
                window = lo + margin
            for mask in np.flatnonzero(errs <= lo + margin):
                cands.append(int(mask) | (high << low_bits))
        for full in cands:
            key = _solution_key(problem, full)
            if key[0] <= window and (best_key is None or key < best_key):
                best_key = key
    err, _, idx = best_key
    return SubsetSumSolution(idx, err, 2**m)


_combo_cache = {}


def _combos(m: int, r: int) -> np.ndarray:
    key = (m, r)
    if key not in _combo_cache:
        if r == 0:
            _combo_cache[key] = np.zeros((1, 0), dtype=np.int64)
        else:
            _combo_cache[key] = np.array(
                list(itertools.combinations(range(m), r)), dtype=np.int64
            )
    return _combo_cache[key]


def solve_threshold(problem: SubsetSumProblem) -> Optional[SubsetSumSolution]:
    """First subset within tolerance, by ascending cardinality then lex order.

    Returns a minimum-cardinality satisfying subset, or None when no subset
    is within tolerance ("not found" is a value, not an error).
    """
    if problem.tolerance <= 0:
        raise DomainError("threshold search needs tolerance > 0")
    m = problem.m
    margin = _error_margin(problem)
    skipped = 0
    for r in range(m + 1):
        idx = _combos(m, r)
        sums = problem.values[idx].sum(axis=1) if r else np.zeros(1)
        hits = np.flatnonzero(np.abs(sums - problem.target) <= problem.tolerance + margin)
        for h in hits:
            chosen = tuple(int(i) for i in idx[h])
            err = abs(problem.target - subset_value(problem.values, chosen))
            if err <= problem.tolerance:
                return SubsetSumSolution(chosen, err, skipped + int(h) + 1)
        skipped += idx.shape[0]
    return None


def required_block_size(epsilon: float, delta: float, c: float = 3.0) -> int:
    """m >= C log(1/min(delta, epsilon)), natural log, rounded up."""
    if not (0 < epsilon < 1 and 0 < delta < 1):
        raise DomainError("epsilon and delta must lie in (0, 1)")
    if c <= 0:
        raise DomainError("C must be positive")
    return math.ceil(c * math.log(1.0 / min(delta, epsilon)))


def sample_problem(
    dist: BaseDistribution, m: int, rng: np.random.Generator, tolerance: float = 0.0
) -> SubsetSumProblem:
    """Values i.i.d. from dist, then a target z ~ U[-1,1], in that draw order."""
    values = dist.draw(m, rng)
    target = rng.uniform(-1.0, 1.0)
    return SubsetSumProblem(values, target, tolerance)


@dataclass(frozen=True)
class TrialRow:
    trial: int
    error: float
    subset_size: int
    found: bool


@dataclass
class StatsReport:
    """Aggregate of many independent subset-sum solves.

    In threshold mode the mean error / subset size / histogram cover found
    trials and fraction_exceeding_tolerance is the not-found rate; in
    optimal mode every trial counts and the fraction compares achieved
    errors against the tolerance.
    """

    dist: str
    mode: str
    m: int
    trials: int
    tolerance: float
    seed: int
    mean_error: float
    ci95: float
    fraction_exceeding_tolerance: float
    mean_subset_size: float
    subset_size_histogram: dict
    not_found: int
    rows: List[TrialRow] = field(default_factory=list, repr=False)


def _run_trial(dist: BaseDistribution, m, tolerance, mode, seed, t) -> TrialRow:
    rng = np.random.default_rng((int(seed), int(t)))
    problem = sample_problem(dist, m, rng, tolerance)
    if mode == OPTIMAL:
        sol = solve_optimal(problem)
        return TrialRow(t, sol.achieved_error, len(sol.indices), True)
    sol = solve_threshold(problem)
    if sol is None:
        return TrialRow(t, math.nan, -1, False)
    return TrialRow(t, sol.achieved_error, len(sol.indices), True)


def _stats_chunk(args) -> List[TrialRow]:
    kind, m, tolerance, mode, seed, lo, hi = args
    dist = BaseDistribution(kind)
    return [_run_trial(dist, m, tolerance, mode, seed, t) for t in range(lo, hi)]


def run_statistics(
    dist: BaseDistribution,
    m: int,
    trials: int,
    tolerance: float,
    mode: str,
    seed: int,
    threads: int = 1,
) -> StatsReport:
    """Solve `trials` independent problems; one derived RNG stream per trial,
    so results are identical at any parallelism level."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if mode not in (OPTIMAL, THRESHOLD):
        raise DomainError("mode must be optimal or threshold")
    if threads > 1:
        chunk = max(64, -(-trials // (4 * threads)))
        jobs = [
            (dist.kind, m, tolerance, mode, seed, lo, min(lo + chunk, trials))
            for lo in range(0, trials, chunk)
        ]
        rows = []
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for part in pool.map(_stats_chunk, jobs):
                rows.extend(part)
    else:
        rows = _stats_chunk((dist.kind, m, tolerance, mode, seed, 0, trials))
    return summarize(rows, dist, m, trials, tolerance, mode, seed)


def summarize(rows, dist, m, trials, tolerance, mode, seed) -> StatsReport:
    found = [r for r in rows if r.found]
    errors = np.array([r.error for r in found])
    sizes = np.array([r.subset_size for r in found])
    n = errors.size
    mean_err = float(errors.mean()) if n else math.nan
    ci = float(1.96 * errors.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    if mode == OPTIMAL:
        frac = float((errors > tolerance).mean()) if n else math.nan
    else:
        frac = (trials - n) / trials
    hist = {}
    for s in sizes:
        hist[int(s)] = hist.get(int(s), 0) + 1
    return StatsReport(
        dist=dist.kind,
        mode=mode,
        m=m,
        trials=trials,
        tolerance=tolerance,
        seed=seed,
        mean_error=mean_err,
        ci95=ci,
        fraction_exceeding_tolerance=frac,
        mean_subset_size=float(sizes.mean()) if n else math.nan,
        subset_size_histogram=hist,
        not_found=trials - n,
        rows=list(rows),
    )


@dataclass
class EmpiricalSolutionSampler:
    """Resampler over stored per-trial outcomes.

    Mirrors drawing a per-parameter (error, subset size) pair from the
    empirical distribution of solved problems, the shortcut used to dry-run
    very large networks without solving every problem anew.
    """

    errors: np.ndarray
    sizes: np.ndarray
    found: np.ndarray

    @classmethod
    def from_report(cls, report: StatsReport) -> "EmpiricalSolutionSampler":
        return cls.from_rows(report.rows)

    @classmethod
    def from_rows(cls, rows) -> "EmpiricalSolutionSampler":
        if not rows:
            raise DomainError("cannot sample from an empty report")
        return cls(
            errors=np.array([r.error for r in rows]),
            sizes=np.array([r.subset_size for r in rows]),
            found=np.array([r.found for r in rows]),
        )

    def draw(self, rng: np.random.Generator):
        i = int(rng.integers(self.errors.size))
        return float(self.errors[i]), int(self.sizes[i]), bool(self.found[i])


def write_stats_csv(report: StatsReport, path, config=None):
    with open(path, "w", newline="") as f:
        f.write("# config: %s\n" % json.dumps(config or {}, sort_keys=True))
        writer = csv.writer(f)
        writer.writerow(["trial", "error", "subset_size", "found"])
        for r in report.rows:
            writer.writerow([r.trial, "%.17g" % r.error, r.subset_size, int(r.found)])


def read_stats_csv(path) -> List[TrialRow]:
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or line.startswith("trial"):
                continue
            t, err, size, found = line.strip().split(",")
            rows.append(TrialRow(int(t), float(err), int(size), bool(int(found))))
    return rows


def stats_summary_dict(report: StatsReport) -> dict:
    return {
        "dist": report.dist,
        "mode": report.mode,
        "m": report.m,
        "trials": report.trials,
        "tolerance": report.tolerance,
        "seed": report.seed,
        "mean_error": report.mean_error,
        "ci95": report.ci95,
        "fraction_exceeding_tolerance": report.fraction_exceeding_tolerance,
        "mean_subset_size": report.mean_subset_size,
        "subset_size_histogram": {
            str(k): v for k, v in sorted(report.subset_size_histogram.items())
        },
        "not_found": report.not_found,
    }


def write_stats_json(report: StatsReport, path, config=None):
    doc = {
        "format": "convticket.stats",
        "version": 1,
        "config": config or {},
        "summary": stats_summary_dict(report),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
