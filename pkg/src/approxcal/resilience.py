"""Error-resilience sweeps over (EM, EP, ER, N_ax).

Every grid point runs ``trials`` injected runs, each with its own seed
derived from ``(base_seed, point index, trial)``, and judges them against
one shared exact reference run.  Results are merged by grid index, so the
profile does not depend on how many worker processes executed it.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from ._fileio import dump_json, ftoa, read_csv, write_csv
from .datagen import CalibrationProblem
from .errormodel import SITE_Z, ErrorModelConfig, wrap_backend
from .errors import HarnessError, NumericFailure, ValidationError
from .stefcal import ArithmeticBackend, ReferenceBackend, RunTrace, StefcalConfig, quality_acceptance, run

N_AX_PERCENT = "percent"
N_AX_ABSOLUTE = "absolute"


def _axis(values, name):
    vals = tuple(values)
    if not vals:
        raise ValidationError(f"sweep axis {name} is empty")
    return vals


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian grid of injection parameters.

    ``N_ax`` entries are percentages of the reference iteration count unless
    ``n_ax_mode`` is ``"absolute"``; ``None`` means no budget (plain SAM).
    """

    EM: tuple
    EP: tuple
    ER: tuple
    N_ax: tuple = (None,)
    trials: int = 5
    base_seed: int = 0
    n_ax_mode: str = N_AX_PERCENT
    sites: tuple = (SITE_Z,)

    def __post_init__(self):
        for name in ("EM", "EP", "ER", "N_ax"):
            object.__setattr__(self, name, _axis(getattr(self, name), name))
        if isinstance(self.trials, bool) or int(self.trials) != self.trials or self.trials < 1:
            raise ValidationError(f"trials must be an integer >= 1, got {self.trials!r}")
        if self.n_ax_mode not in (N_AX_PERCENT, N_AX_ABSOLUTE):
            raise ValidationError(f"n_ax_mode must be percent or absolute, got {self.n_ax_mode!r}")
        for er in self.ER:
            if not 0 <= er <= 100:
                raise ValidationError(f"ER values must lie in [0, 100], got {er}")
        for ep in self.EP:
            if ep < 0:
                raise ValidationError(f"EP values must be >= 0, got {ep}")
        for n in self.N_ax:
            if n is not None and n < 0:
                raise ValidationError(f"N_ax values must be >= 0, got {n}")
        object.__setattr__(self, "sites", tuple(self.sites))

    def points(self):
        """``(index, EM, EP, ER, N_ax)`` in a fixed order."""
        return [(k, em, ep, er, n) for k, (n, em, ep, er) in
                enumerate(product(self.N_ax, self.EM, self.EP, self.ER))]

    def to_dict(self) -> dict:
        return {"EM": list(self.EM), "EP": list(self.EP), "ER": list(self.ER),
                "N_ax": list(self.N_ax), "trials": self.trials, "base_seed": self.base_seed,
                "n_ax_mode": self.n_ax_mode, "sites": list(self.sites)}


def resolve_n_ax(value, mode: str, n_ref: int) -> int | None:
    """Absolute iteration budget for one grid value (floor of the percentage)."""
    if value is None:
        return None
    if mode == N_AX_ABSOLUTE:
        return int(value)
    return math.floor(Fraction(str(value)) * n_ref / 100)


def trial_seed(base_seed: int, index: int, trial: int) -> tuple:
    return (int(base_seed), int(index), int(trial))


@dataclass(frozen=True)
class TrialResult:
    trial: int
    converged: bool
    iterations: int
    final_diff_rel: float | None
    accepted: bool
    reasons: tuple


@dataclass(frozen=True)
class PointResult:
    index: int
    EM: float
    EP: float
    ER: float
    N_ax: object
    N_ax_iterations: int | None
    trials: tuple

    @property
    def acceptance_rate(self) -> float:
        return sum(t.accepted for t in self.trials) / len(self.trials)

    @property
    def converged_rate(self) -> float:
        return sum(t.converged for t in self.trials) / len(self.trials)

    @property
    def mean_diff_rel(self) -> float | None:
        vals = [t.final_diff_rel for t in self.trials]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))

    @property
    def mean_iterations(self) -> float:
        return float(np.mean([t.iterations for t in self.trials]))

    def reason_counts(self) -> dict:
        out = {"convergence": 0, "diff_rel": 0, "iterations": 0, "numeric": 0}
        for t in self.trials:
            for r in t.reasons:
                out[r] = out.get(r, 0) + 1
        return out


@dataclass(frozen=True)
class Frontier:
    """Greedy per-axis maxima with full acceptance at a fixed ER."""

    ER: float
    empty: bool
    N_ax: object = None
    EM: float | None = None
    EP: float | None = None

    def as_dict(self) -> dict:
        return {"ER": self.ER, "empty": self.empty, "N_ax": self.N_ax, "EM": self.EM, "EP": self.EP}


@dataclass(frozen=True)
class ResilienceProfile:
    grid: SweepGrid
    reference_iterations: int
    points: tuple = field(default=())

    def point(self, EM, EP, ER, N_ax) -> PointResult:
        for p in self.points:
            if (p.EM, p.EP, p.ER, p.N_ax) == (EM, EP, ER, N_ax):
                return p
        raise KeyError((EM, EP, ER, N_ax))


def _run_point(args) -> PointResult:
    problem, cfg, grid, backend_base, reference, (index, em, ep, er, n_ax) = args
    n_abs = resolve_n_ax(n_ax, grid.n_ax_mode, reference.iterations)
    trials = []
    for t in range(grid.trials):
        emc = ErrorModelConfig(EM=em, EP=ep, ER=er, N_ax=n_abs, sites=grid.sites,
                               seed=trial_seed(grid.base_seed, index, t))
        try:
            trace = run(problem, cfg, wrap_backend(backend_base, emc))
        except NumericFailure as exc:
            trials.append(TrialResult(t, False, exc.iteration, None, False, ("numeric",)))
            continue
        acc = quality_acceptance(trace, reference, cfg)
        trials.append(TrialResult(t, trace.converged, trace.iterations, acc.diff_rel,
                                  acc.accepted, acc.reasons))
    return PointResult(index, em, ep, er, n_ax, n_abs, tuple(trials))


def run_sweep(problem: CalibrationProblem, cfg: StefcalConfig | None, grid: SweepGrid,
              backend_base: ArithmeticBackend | None = None, jobs: int = 1,
              reference: RunTrace | None = None) -> ResilienceProfile:
    """Evaluate quality acceptance at every grid point.

    Parameters
    ----------
    backend_base : ArithmeticBackend, optional
        Backend that is wrapped for injection and also produces the
        reference run; double precision by default.
    jobs : int
        Worker processes; the result does not depend on it.
    reference : RunTrace, optional
        Precomputed exact run of ``backend_base``.
    """
    cfg = cfg or StefcalConfig()
    backend_base = backend_base or ReferenceBackend()
    if reference is None:
        reference = run(problem, cfg, backend_base)
    if not reference.converged:
        raise HarnessError(
            f"reference run did not converge within {cfg.max_iters} iterations; "
            "there is nothing to compare against")
    tasks = [(problem, cfg, grid, backend_base, reference, pt) for pt in grid.points()]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_point(t) for t in tasks]
    results.sort(key=lambda r: r.index)
    return ResilienceProfile(grid, reference.iterations, tuple(results))


def _n_ax_key(v):
    return math.inf if v is None else v


def frontier(profile: ResilienceProfile, ER_fixed) -> Frontier:
    """Largest fully accepted values per axis at ``ER = ER_fixed``.

    Starting from the smallest value on every axis, the scan raises N_ax,
    then EM, then EP, one axis at a time, as far as every step stays fully
    accepted (rate 1.0) with the other axes held at their current values.
    The result is the region connected to the grid origin; an isolated
    accepted point further out is not reported.
    """
    if ER_fixed not in profile.grid.ER:
        raise ValidationError(f"ER={ER_fixed} is not on the sweep grid {profile.grid.ER}")
    rate = {(p.N_ax, p.EM, p.EP): p.acceptance_rate for p in profile.points if p.ER == ER_fixed}
    axes = [sorted(set(profile.grid.N_ax), key=_n_ax_key),
            sorted(set(profile.grid.EM)), sorted(set(profile.grid.EP))]
    current = [a[0] for a in axes]
    if rate[tuple(current)] < 1.0:
        return Frontier(ER=ER_fixed, empty=True)
    for k, values in enumerate(axes):
        for v in values[values.index(current[k]) + 1:]:
            trial = list(current)
            trial[k] = v
            if rate[tuple(trial)] < 1.0:
                break
            current = trial
    return Frontier(ER=ER_fixed, empty=False, N_ax=current[0], EM=current[1], EP=current[2])


# ---------------------------------------------------------------- kernel load

# Floating-point-equivalent cost per element.  SOFTWARE_FLOPS prices Z^H Z
# as a general complex dot product, as a library dot routine evaluates it;
# HARDWARE_FLOPS prices it as two squares and two adds.
SOFTWARE_FLOPS = {"pe": 6, "mac": 8, "sac": 8, "division": 6}
HARDWARE_FLOPS = {"pe": 6, "mac": 8, "sac": 4, "division": 2}


@dataclass(frozen=True)
class KernelLoad:
    P: int
    operations: dict
    shares: dict

    @property
    def dot_product_share(self) -> float:
        return self.shares["mac"] + self.shares["sac"]


def profile_kernels(problem, cfg=None, weights=None) -> KernelLoad:
    """Analytic per-iteration operation counts and percentage shares.

    Per iteration: ``P**2`` PE complex multiplies, ``P**2`` MAC complex
    multiply-accumulates, ``P**2`` SAC square-accumulates and ``P``
    divisions.  ``problem`` may be a :class:`CalibrationProblem` or an
    antenna count.
    """
    P = problem.P if isinstance(problem, CalibrationProblem) else int(problem)
    if P < 1:
        raise ValidationError(f"P must be >= 1, got {P}")
    w = weights or SOFTWARE_FLOPS
    ops = {"pe": w["pe"] * P * P, "mac": w["mac"] * P * P, "sac": w["sac"] * P * P,
           "division": w["division"] * P}
    total = sum(ops.values())
    return KernelLoad(P, ops, {k: 100.0 * v / total for k, v in ops.items()})


# ---------------------------------------------------------------- exports

PROFILE_COLUMNS = ["index", "EM", "EP", "ER", "N_ax", "N_ax_iterations", "trials",
                   "acceptance_rate", "converged_rate", "mean_diff_rel", "mean_iterations",
                   "fail_convergence", "fail_diff_rel", "fail_iterations", "fail_numeric"]
LONG_COLUMNS = ["index", "trial", "EM", "EP", "ER", "N_ax", "N_ax_iterations",
                "converged", "iterations", "final_diff_rel", "accepted", "reasons"]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    return ftoa(v)


def _n_ax_cell(v):
    return "inf" if v is None else _cell(v)


def write_profile_csv(profile: ResilienceProfile, path):
    rows = []
    for p in profile.points:
        rc = p.reason_counts()
        rows.append([p.index, _cell(p.EM), _cell(p.EP), _cell(p.ER), _n_ax_cell(p.N_ax),
                     _cell(p.N_ax_iterations), len(p.trials), _cell(p.acceptance_rate),
                     _cell(p.converged_rate), _cell(p.mean_diff_rel), _cell(p.mean_iterations),
                     rc["convergence"], rc["diff_rel"], rc["iterations"], rc["numeric"]])
    return write_csv(path, PROFILE_COLUMNS, rows)


def write_profile_long_csv(profile: ResilienceProfile, path):
    """One row per trial, for surface plots."""
    rows = []
    for p in profile.points:
        for t in p.trials:
            rows.append([p.index, t.trial, _cell(p.EM), _cell(p.EP), _cell(p.ER),
                         _n_ax_cell(p.N_ax), _cell(p.N_ax_iterations), int(t.converged),
                         t.iterations, _cell(t.final_diff_rel), int(t.accepted),
                         ";".join(t.reasons)])
    return write_csv(path, LONG_COLUMNS, rows)


def read_profile_long_csv(path, grid: SweepGrid, reference_iterations: int) -> ResilienceProfile:
    """Rebuild a profile from its per-trial export."""
    header, rows = read_csv(path)
    if header != LONG_COLUMNS:
        raise ValidationError(f"{path}: unexpected header {header}")
    by_index: dict[int, list] = {}
    meta = {}
    for r in rows:
        idx = int(r[0])
        meta[idx] = r
        by_index.setdefault(idx, []).append(TrialResult(
            int(r[1]), bool(int(r[7])), int(r[8]), None if r[9] == "" else float(r[9]),
            bool(int(r[10])), tuple(x for x in r[11].split(";") if x)))
    pts = {pt[0]: pt for pt in grid.points()}
    out = []
    for idx in sorted(by_index):
        _, em, ep, er, n = pts[idx]
        r = meta[idx]
        out.append(PointResult(idx, em, ep, er, n, None if r[6] == "" else int(r[6]),
                               tuple(by_index[idx])))
    return ResilienceProfile(grid, reference_iterations, tuple(out))


def profile_summary(profile: ResilienceProfile, ER_fixed=None) -> dict:
    ers = [ER_fixed] if ER_fixed is not None else sorted(set(profile.grid.ER))
    return {
        "grid": profile.grid.to_dict(),
        "reference_iterations": profile.reference_iterations,
        "points": len(profile.points),
        "overall_acceptance_rate": float(np.mean([p.acceptance_rate for p in profile.points])),
        "frontier": [frontier(profile, er).as_dict() for er in ers],
        "negative_EM_present": any(em < 0 for em in profile.grid.EM),
    }


def write_profile_json(profile: ResilienceProfile, path, ER_fixed=None):
    return dump_json(path, profile_summary(profile, ER_fixed))
