"""StEFCal gain calibration with pluggable arithmetic.

One iteration forms ``Z[:, p] = M[:, p] * g_prev`` for every antenna ``p``
and solves the scalar least-squares problem

    g[p] = (V[:, p]^H Z[:, p]) / (Z[:, p]^H Z[:, p]).

How those products and sums are evaluated is delegated to an
:class:`ArithmeticBackend`.  The loop itself (averaging on even iterations,
the stopping rule, trace bookkeeping) always runs in double precision.

Gains are only determined up to one global phase.  Comparisons between
solutions can rotate both vectors so that antenna 0 is real and positive
(``StefcalConfig.phase_reference``); the iteration never does.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels
from ._fileio import dump_json, ftoa, read_csv, write_csv
from .datagen import CalibrationProblem, apply_gains
from .errors import NumericFailure, SingularDenominatorError, ValidationError

__all__ = [
    "StefcalConfig",
    "IterationRecord",
    "RunTrace",
    "Acceptance",
    "Step",
    "ArithmeticBackend",
    "KernelSession",
    "ReferenceBackend",
    "z_column",
    "gain_update",
    "run",
    "convergence_metric",
    "diff_rel",
    "reference_phase",
    "residual",
    "quality_acceptance",
]

CORE_REFERENCE = "reference"
CORE_ACCURATE = "accurate"
CORE_APPROXIMATE = "approximate"

REFERENCE_DEN_FLOOR = 1e-300


@dataclass(frozen=True)
class StefcalConfig:
    """Loop and acceptance settings.

    Parameters
    ----------
    max_iters : int
        Iteration budget.
    tol : float
        Stop once the relative change between iterates is at or below this.
    even_averaging : bool
        Replace every even iterate by the mean of it and its predecessor.
    diff_tol : float
        Largest accepted relative distance to the reference solution.
    phase_reference : bool
        Rotate both vectors to a real-positive antenna 0 before measuring
        their distance.
    """

    max_iters: int = 500
    tol: float = 1e-6
    even_averaging: bool = True
    diff_tol: float = 1e-5
    phase_reference: bool = True

    def __post_init__(self):
        if isinstance(self.max_iters, bool) or int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValidationError(f"max_iters must be an integer >= 1, got {self.max_iters!r}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ValidationError(f"tol must be finite and > 0, got {self.tol!r}")
        if not (self.diff_tol > 0 and math.isfinite(self.diff_tol)):
            raise ValidationError(f"diff_tol must be finite and > 0, got {self.diff_tol!r}")


# ---------------------------------------------------------------- metrics


def convergence_metric(g_i, g_prev) -> float:
    """Relative change ``||g_i - g_prev|| / ||g_i||``."""
    g_i = np.asarray(g_i)
    n = float(np.linalg.norm(g_i))
    if n == 0.0:
        raise ValidationError("convergence metric undefined for zero-norm gains")
    return float(np.linalg.norm(g_i - np.asarray(g_prev))) / n


def reference_phase(g, antenna: int = 0) -> np.ndarray:
    """Rotate ``g`` so that ``g[antenna]`` is real and positive."""
    g = np.asarray(g, dtype=np.complex128)
    a = abs(g[antenna])
    if a == 0.0:
        return g.copy()
    return g * (g[antenna].conjugate() / a)


def diff_rel(g_ref, g_other, phase_reference: bool = False) -> float:
    """Relative distance ``||g_ref - g_other|| / ||g_ref||``.

    With ``phase_reference`` both vectors are first rotated so that their
    antenna 0 entry is real and positive, which removes the unobservable
    global phase.
    """
    g_ref = np.asarray(g_ref, dtype=np.complex128)
    g_other = np.asarray(g_other, dtype=np.complex128)
    n = float(np.linalg.norm(g_ref))
    if n == 0.0:
        raise ValidationError("diff_rel undefined for a zero-norm reference")
    if phase_reference:
        g_ref, g_other = reference_phase(g_ref), reference_phase(g_other)
    return float(np.linalg.norm(g_ref - g_other)) / n


def residual(problem: CalibrationProblem, g) -> float:
    """Frobenius norm of ``V - G M G^H``."""
    return float(np.linalg.norm(problem.V - apply_gains(g, problem.M)))


# ---------------------------------------------------------------- backends


class Step(NamedTuple):
    gains: np.ndarray
    core: str
    injected: bool


class KernelSession:
    """Per-run state of a backend bound to one problem.

    Subclasses provide the three kernels.  ``fused`` may be overridden with
    a faster path, provided it returns bit-identical values to the staged
    composition.
    """

    core_tag = CORE_REFERENCE
    den_floor = REFERENCE_DEN_FLOOR

    def __init__(self, problem: CalibrationProblem):
        self.problem = problem
        self.P = problem.P

    def core(self, i: int) -> str:
        return self.core_tag

    def z_kernel(self, g_prev, i: int) -> np.ndarray:
        raise NotImplementedError

    def mac_kernel(self, Z, i: int) -> np.ndarray:
        raise NotImplementedError

    def sac_kernel(self, Z, i: int) -> np.ndarray:
        raise NotImplementedError

    def fused(self, g_prev, i: int):
        Z = self.z_kernel(g_prev, i)
        return self.mac_kernel(Z, i), self.sac_kernel(Z, i)

    def divide(self, num, den, i: int) -> np.ndarray:
        small = np.flatnonzero(~(den >= self.den_floor))
        if small.size:
            p = int(small[0])
            raise SingularDenominatorError(p, i, float(den[p]))
        return num / den

    def update(self, g_prev, i: int) -> Step:
        num, den = self.fused(g_prev, i)
        return Step(self.divide(num, den, i), self.core(i), False)


class ArithmeticBackend(ABC):
    """Factory for :class:`KernelSession` objects plus single-column helpers.

    Backends hold configuration only, so one instance may be shared by many
    runs; all mutable state lives in the session returned by :meth:`bind`.
    """

    tag = CORE_REFERENCE

    @abstractmethod
    def bind(self, problem: CalibrationProblem) -> KernelSession:
        ...

    @abstractmethod
    def z_column(self, M_col, g_prev) -> np.ndarray:
        ...

    @abstractmethod
    def gain_update(self, V_col, Z_col, p: int = 0, i: int = 0) -> complex:
        ...


class _ReferenceSession(KernelSession):
    def __init__(self, problem):
        super().__init__(problem)
        self.m_re = np.ascontiguousarray(problem.M.real)
        self.m_im = np.ascontiguousarray(problem.M.imag)
        self.v_re = np.ascontiguousarray(problem.V.real)
        self.v_im = np.ascontiguousarray(problem.V.imag)

    # Stage kernels spell out the same real arithmetic as the fused kernel.
    def z_kernel(self, g_prev, i):
        gr = np.ascontiguousarray(g_prev.real)[:, None]
        gi = np.ascontiguousarray(g_prev.imag)[:, None]
        zr = self.m_re * gr - self.m_im * gi
        zi = self.m_re * gi + self.m_im * gr
        return zr + 1j * zi

    def mac_kernel(self, Z, i):
        zr, zi = Z.real, Z.imag
        num_re = (self.v_re * zr + self.v_im * zi).sum(axis=0)
        num_im = (self.v_re * zi - self.v_im * zr).sum(axis=0)
        return num_re + 1j * num_im

    def sac_kernel(self, Z, i):
        zr, zi = Z.real, Z.imag
        return (zr * zr + zi * zi).sum(axis=0)

    def fused(self, g_prev, i):
        num_re, num_im, den = kernels.ref_iteration(
            self.m_re, self.m_im, self.v_re, self.v_im,
            np.ascontiguousarray(g_prev.real), np.ascontiguousarray(g_prev.imag),
        )
        return num_re + 1j * num_im, den


class ReferenceBackend(ArithmeticBackend):
    """IEEE double precision throughout."""

    tag = CORE_REFERENCE

    def bind(self, problem):
        return _ReferenceSession(problem)

    def z_column(self, M_col, g_prev):
        return np.asarray(M_col, dtype=np.complex128) * np.asarray(g_prev, dtype=np.complex128)

    def gain_update(self, V_col, Z_col, p=0, i=0):
        V_col = np.asarray(V_col, dtype=np.complex128)
        Z_col = np.asarray(Z_col, dtype=np.complex128)
        den = float(np.sum(Z_col.real ** 2 + Z_col.imag ** 2))
        if not den >= REFERENCE_DEN_FLOOR:
            raise SingularDenominatorError(p, i, den)
        return complex(np.vdot(V_col, Z_col) / den)


def z_column(M_col, g_prev, backend: ArithmeticBackend | None = None) -> np.ndarray:
    """``M_col * g_prev`` under the backend's arithmetic."""
    M_col, g_prev = np.asarray(M_col), np.asarray(g_prev)
    if M_col.shape != g_prev.shape:
        raise ValidationError(f"length mismatch: {M_col.shape} vs {g_prev.shape}")
    return (backend or ReferenceBackend()).z_column(M_col, g_prev)


def gain_update(V_col, Z_col, backend: ArithmeticBackend | None = None,
                p: int = 0, i: int = 0) -> complex:
    """Least-squares gain ``(V_col^H Z_col) / (Z_col^H Z_col)`` for one antenna."""
    V_col, Z_col = np.asarray(V_col), np.asarray(Z_col)
    if V_col.shape != Z_col.shape:
        raise ValidationError(f"length mismatch: {V_col.shape} vs {Z_col.shape}")
    return (backend or ReferenceBackend()).gain_update(V_col, Z_col, p, i)


# ---------------------------------------------------------------- traces

TERMINAL_CONVERGED = "converged"
TERMINAL_EXHAUSTED = "exhausted"


@dataclass(frozen=True, eq=False)
class IterationRecord:
    i: int
    gains: np.ndarray
    convergence: float
    residual: float
    diff_rel: float | None
    core: str
    error_flag: bool
    terminal: str = ""

    def same_as(self, other: "IterationRecord") -> bool:
        """Bitwise equality, the comparison used for reproducibility checks."""
        return (
            self.i == other.i
            and self.gains.tobytes() == other.gains.tobytes()
            and ftoa(self.convergence) == ftoa(other.convergence)
            and ftoa(self.residual) == ftoa(other.residual)
            and _opt(self.diff_rel) == _opt(other.diff_rel)
            and self.core == other.core
            and self.error_flag == other.error_flag
            and self.terminal == other.terminal
        )


def _opt(x):
    return "" if x is None else ftoa(x)


TRACE_COLUMNS = ["i", "convergence", "residual", "diff_rel", "core", "error_flag", "terminal"]
GAIN_COLUMNS = ["i", "antenna", "re", "im"]


@dataclass(eq=False)
class RunTrace:
    """Iteration history of one run.

    ``decision_log`` and ``quant_stats`` are filled in when the backend
    session keeps an injection log or fixed-point statistics.
    """

    records: list = field(default_factory=list)
    decision_log: list | None = None
    quant_stats: object = None

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def status(self) -> str:
        return self.records[-1].terminal if self.records else ""

    @property
    def converged(self) -> bool:
        return self.status == TERMINAL_CONVERGED

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]

    @property
    def final_gains(self) -> np.ndarray:
        return self.records[-1].gains

    def gains_at(self, i: int) -> np.ndarray:
        """Gains after iteration ``i``, clamped to the last iteration run."""
        return self.records[min(i, len(self.records)) - 1].gains

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def same_as(self, other: "RunTrace") -> bool:
        return len(self) == len(other) and all(
            a.same_as(b) for a, b in zip(self.records, other.records)
        )

    def summary(self) -> dict:
        cores: dict[str, int] = {}
        for r in self.records:
            cores[r.core] = cores.get(r.core, 0) + 1
        last = self.final
        return {
            "status": self.status,
            "converged": self.converged,
            "iterations": self.iterations,
            # some reports count only even iterations; flagged explicitly
            "even_iterations": self.iterations // 2,
            "final_convergence": last.convergence,
            "final_residual": last.residual,
            "final_diff_rel": last.diff_rel,
            "iterations_per_core": cores,
            "injected_iterations": int(sum(r.error_flag for r in self.records)),
        }

    # -- CSV round trip

    def write_csv(self, path, gains_path=None):
        """Write the per-iteration table and, alongside, the gain vectors.

        Returns the two paths written.
        """
        path = Path(path)
        gains_path = Path(gains_path) if gains_path else path.with_name(path.stem + "_gains.csv")
        rows = [
            [r.i, ftoa(r.convergence), ftoa(r.residual), _opt(r.diff_rel), r.core,
             int(r.error_flag), r.terminal]
            for r in self.records
        ]
        write_csv(path, TRACE_COLUMNS, rows)
        grows = [
            [r.i, p, ftoa(z.real), ftoa(z.imag)]
            for r in self.records for p, z in enumerate(r.gains)
        ]
        write_csv(gains_path, GAIN_COLUMNS, grows)
        return path, gains_path

    @classmethod
    def read_csv(cls, path, gains_path=None) -> "RunTrace":
        path = Path(path)
        gains_path = Path(gains_path) if gains_path else path.with_name(path.stem + "_gains.csv")
        header, rows = read_csv(path)
        if header != TRACE_COLUMNS:
            raise ValidationError(f"{path}: unexpected trace header {header}")
        gheader, grows = read_csv(gains_path)
        if gheader != GAIN_COLUMNS:
            raise ValidationError(f"{gains_path}: unexpected gains header {gheader}")
        gains: dict[int, list] = {}
        for i, p, re_, im_ in grows:
            gains.setdefault(int(i), []).append((int(p), complex(float(re_), float(im_))))
        records = []
        for i, conv, res, d, core, flag, term in rows:
            entries = sorted(gains.get(int(i), []))
            g = np.array([z for _, z in entries], dtype=np.complex128)
            records.append(IterationRecord(
                i=int(i), gains=g, convergence=float(conv), residual=float(res),
                diff_rel=None if d == "" else float(d), core=core,
                error_flag=bool(int(flag)), terminal=term,
            ))
        return cls(records)

    def write_summary(self, path, extra: dict | None = None):
        doc = self.summary()
        if extra:
            doc.update(extra)
        return dump_json(path, doc)


# ---------------------------------------------------------------- the loop


def run(problem: CalibrationProblem, cfg: StefcalConfig | None = None,
        backend: ArithmeticBackend | None = None,
        reference_trace: RunTrace | None = None,
        g0=None) -> RunTrace:
    """Iterate until the relative change drops to ``cfg.tol`` or the budget ends.

    Parameters
    ----------
    problem : CalibrationProblem
    cfg : StefcalConfig, optional
    backend : ArithmeticBackend, optional
        Defaults to :class:`ReferenceBackend`.
    reference_trace : RunTrace, optional
        When given, each record carries its distance to the reference gains
        of the same iteration (or the reference's last iteration, once the
        reference has stopped).
    g0 : array_like, optional
        Starting gains; all ones by default.

    Returns
    -------
    RunTrace
        Exactly one terminal record, the last one.
    """
    cfg = cfg or StefcalConfig()
    backend = backend or ReferenceBackend()
    session = backend.bind(problem)
    P = problem.P
    g_prev = np.ones(P, dtype=np.complex128) if g0 is None else np.array(g0, dtype=np.complex128)
    if g_prev.shape != (P,):
        raise ValidationError(f"g0 must have length {P}")

    records = []
    for i in range(1, cfg.max_iters + 1):
        step = session.update(g_prev, i)
        g = step.gains
        if cfg.even_averaging and i % 2 == 0:
            g = 0.5 * (g + g_prev)
        if not np.all(np.isfinite(g)):
            raise NumericFailure("non-finite gains", i)
        try:
            conv = convergence_metric(g, g_prev)
        except ValidationError:
            raise NumericFailure("all gains are zero", i) from None
        d = None
        if reference_trace is not None and len(reference_trace):
            d = diff_rel(reference_trace.gains_at(i), g, cfg.phase_reference)
        rec = IterationRecord(i=i, gains=g, convergence=conv, residual=residual(problem, g),
                              diff_rel=d, core=step.core, error_flag=bool(step.injected))
        if conv <= cfg.tol:
            records.append(replace(rec, terminal=TERMINAL_CONVERGED))
            break
        records.append(rec)
        g_prev = g
    else:
        records[-1] = replace(records[-1], terminal=TERMINAL_EXHAUSTED)
    return RunTrace(records, getattr(session, "decision_log", None), getattr(session, "stats", None))


# ---------------------------------------------------------------- acceptance


@dataclass(frozen=True)
class Acceptance:
    accepted: bool
    reasons: tuple
    diff_rel: float
    iterations: int
    reference_iterations: int

    def __bool__(self):
        return self.accepted


def quality_acceptance(trace: RunTrace, reference_trace: RunTrace,
                       cfg: StefcalConfig | None = None) -> Acceptance:
    """Judge a run against the exact reference run.

    Accepted iff the run converged, its final gains are within
    ``cfg.diff_tol`` of the reference's final gains, and it used no more
    iterations than the reference.  ``reasons`` names each failed clause:
    ``"convergence"``, ``"diff_rel"``, ``"iterations"``.
    """
    cfg = cfg or StefcalConfig()
    if not len(trace) or not len(reference_trace):
        raise ValidationError("both traces must contain at least one iteration")
    d = diff_rel(reference_trace.final_gains, trace.final_gains, cfg.phase_reference)
    reasons = []
    if not trace.converged:
        reasons.append("convergence")
    if not d <= cfg.diff_tol:
        reasons.append("diff_rel")
    if trace.iterations > reference_trace.iterations:
        reasons.append("iterations")
    return Acceptance(not reasons, tuple(reasons), d, trace.iterations, reference_trace.iterations)
