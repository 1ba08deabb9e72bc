"""Two-core calibration accelerator model.

The datapath follows the three hardware blocks of one StEFCal iteration:

* PE multiplies the model covariance (``h`` = real part, ``t`` = imaginary
  part) by the gain register, producing full-width products.
* SAC rounds those products onto its two squarer inputs (``e_sac`` for the
  real part, ``f_sac`` for the imaginary part), clears the configured low
  bits, squares and accumulates.
* MAC rounds the same products onto its ``f_mac`` bus, pairs them with the
  measured covariance on the ``e_mac`` bus (both truncated), and
  accumulates the four partial products of a complex multiply.

Accumulators are full width plus guard bits and saturate once at the end of
a column.  The final division runs in double precision.

An approximate core is the same datapath with low bits cleared on some
signals.  :func:`run_hetero` runs the first ``N_ax`` iterations on it and the
rest on the accurate core; :func:`explore_dse` searches for the largest
``N_ax`` that still meets quality acceptance.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import kernels
from ._kernels_py import (
    HI_ES, HI_FS, HI_MAC, HI_SAC, HI_ZM, LO_ES, LO_FS, LO_MAC, LO_SAC, LO_ZM,
    LSH_ES2, LSH_FS2, N_PARAMS, SAT_SIGNALS, SHIFT_ES, SHIFT_FS, SHIFT_ZM,
    TRUNC_ES, TRUNC_FS, TRUNC_ZM,
)
from ._fileio import dump_json
from .datagen import CalibrationProblem
from .errors import HarnessError, ValidationError
from .fixedpoint import (
    FixedFormat,
    QuantStats,
    quantize_array,
    raw_to_float,
    saturate_array,
    truncate_array,
)
from .stefcal import (
    CORE_ACCURATE,
    CORE_APPROXIMATE,
    ArithmeticBackend,
    KernelSession,
    RunTrace,
    StefcalConfig,
    quality_acceptance,
    run,
)
from .errors import SingularDenominatorError

SIGNALS = ("h", "t", "e_sac", "f_sac", "e_mac", "f_mac")
SIGNAL_WIDTHS = {"h": 18, "t": 18, "e_sac": 21, "f_sac": 20, "e_mac": 23, "f_mac": 24}
APPROX_TRUNCATION = {"h": 0, "t": 0, "e_sac": 8, "f_sac": 8, "e_mac": 8, "f_mac": 12}
# Binary points chosen for generator-normalised data: |M| < 1, |g| < 2,
# |Z| < 2 and |V| < 4 with one spare bit where the width allows it.
DEFAULT_FRACTIONS = {"h": 17, "t": 17, "e_sac": 19, "f_sac": 18, "e_mac": 21, "f_mac": 22}
DEFAULT_GAIN_FORMAT = FixedFormat(28, 25)
DEFAULT_GUARD_BITS = 7
MAX_SIGNAL_WIDTH = 28

# Reported figures for the two synthesised cores.
ACCURATE_CORE_POWER_MW = 3.55
APPROXIMATE_CORE_POWER_MW = 2.08
ACCURATE_CORE_AREA_UM2 = 27023
APPROXIMATE_CORE_AREA_UM2 = 20604
HETEROGENEOUS_AREA_OVERHEAD = 0.76


@dataclass(frozen=True)
class SignalSpec:
    fmt: FixedFormat
    trunc: int = 0


def _as_truncation(trunc) -> dict:
    if isinstance(trunc, Mapping):
        missing = set(SIGNALS) - set(trunc)
        if missing:
            raise ValidationError(f"truncation missing signals {sorted(missing)}")
        return {s: int(trunc[s]) for s in SIGNALS}
    trunc = tuple(int(k) for k in trunc)
    if len(trunc) != len(SIGNALS):
        raise ValidationError(f"truncation vector needs {len(SIGNALS)} entries, got {len(trunc)}")
    return dict(zip(SIGNALS, trunc))


@dataclass(frozen=True, eq=False)
class DatapathConfig:
    """Per-signal formats and truncation for one core.

    Parameters
    ----------
    signals : mapping of str to SignalSpec
        One entry for each of ``h, t, e_sac, f_sac, e_mac, f_mac``.
    gain_fmt : FixedFormat
        Register holding the gain vector fed to the PE multipliers.
    guard_bits : int
        Extra integer bits on both accumulators.
    role : str
        Core tag reported in traces.
    """

    signals: Mapping[str, SignalSpec]
    gain_fmt: FixedFormat = DEFAULT_GAIN_FORMAT
    guard_bits: int = DEFAULT_GUARD_BITS
    role: str = CORE_ACCURATE

    def __post_init__(self):
        sig = dict(self.signals)
        if set(sig) != set(SIGNALS):
            raise ValidationError(f"datapath needs exactly the signals {SIGNALS}, got {sorted(sig)}")
        for name in SIGNALS:
            spec = sig[name]
            if spec.fmt.word_len > MAX_SIGNAL_WIDTH:
                raise ValidationError(
                    f"{name}: {spec.fmt} exceeds the {MAX_SIGNAL_WIDTH}-bit signal limit")
            if not 0 <= spec.trunc < spec.fmt.word_len:
                raise ValidationError(
                    f"{name}: truncation {spec.trunc} must be in 0..{spec.fmt.word_len - 1}")
        if sig["h"].fmt != sig["t"].fmt:
            raise ValidationError("h and t feed one complex multiplier and must share a format")
        if self.gain_fmt.word_len > MAX_SIGNAL_WIDTH:
            raise ValidationError(f"gain register {self.gain_fmt} exceeds {MAX_SIGNAL_WIDTH} bits")
        if not 0 <= self.guard_bits <= 16:
            raise ValidationError(f"guard_bits must be in 0..16, got {self.guard_bits}")
        if self.role not in (CORE_ACCURATE, CORE_APPROXIMATE):
            raise ValidationError(f"role must be accurate or approximate, got {self.role!r}")
        object.__setattr__(self, "signals", sig)
        if self.sac_acc_fmt.word_len > 62 or self.mac_acc_fmt.word_len > 62:
            raise ValidationError("accumulator wider than 62 bits does not fit the int64 kernels")

    def __eq__(self, other):
        return isinstance(other, DatapathConfig) and self.to_dict() == other.to_dict()

    # -- presets

    @classmethod
    def accurate(cls) -> "DatapathConfig":
        return cls({s: SignalSpec(FixedFormat(SIGNAL_WIDTHS[s], DEFAULT_FRACTIONS[s])) for s in SIGNALS})

    @classmethod
    def approximate(cls, truncation=None) -> "DatapathConfig":
        return cls.accurate().with_truncation(truncation or APPROX_TRUNCATION)

    def with_truncation(self, truncation, role: str = CORE_APPROXIMATE) -> "DatapathConfig":
        t = _as_truncation(truncation)
        return DatapathConfig({s: SignalSpec(self.signals[s].fmt, t[s]) for s in SIGNALS},
                              self.gain_fmt, self.guard_bits, role)

    # -- derived quantities

    def fmt(self, name: str) -> FixedFormat:
        return self.signals[name].fmt

    def trunc(self, name: str) -> int:
        return self.signals[name].trunc

    @property
    def truncation(self) -> tuple:
        return tuple(self.signals[s].trunc for s in SIGNALS)

    @property
    def total_truncated_bits(self) -> int:
        return sum(self.truncation)

    @property
    def pe_frac(self) -> int:
        return self.fmt("h").frac_len + self.gain_fmt.frac_len

    @property
    def pe_word(self) -> int:
        # complex product: sum of two products needs one extra bit
        return self.fmt("h").word_len + self.gain_fmt.word_len + 1

    @property
    def sac_acc_fmt(self) -> FixedFormat:
        e, f = self.fmt("e_sac"), self.fmt("f_sac")
        frac = 2 * max(e.frac_len, f.frac_len)
        ints = max(2 * (e.word_len - e.frac_len), 2 * (f.word_len - f.frac_len))
        return FixedFormat(ints + frac + 1 + self.guard_bits, frac)

    @property
    def mac_acc_fmt(self) -> FixedFormat:
        v, z = self.fmt("e_mac"), self.fmt("f_mac")
        frac = v.frac_len + z.frac_len
        ints = (v.word_len - v.frac_len) + (z.word_len - z.frac_len)
        return FixedFormat(ints + frac + 1 + self.guard_bits, frac)

    def kernel_params(self) -> np.ndarray:
        """Parameter vector for :func:`approxcal.kernels.fx_iteration`."""
        p = np.zeros(N_PARAMS, dtype=np.int64)
        for name, (sh, tr, lo, hi) in {
            "e_sac": (SHIFT_ES, TRUNC_ES, LO_ES, HI_ES),
            "f_sac": (SHIFT_FS, TRUNC_FS, LO_FS, HI_FS),
            "f_mac": (SHIFT_ZM, TRUNC_ZM, LO_ZM, HI_ZM),
        }.items():
            fmt = self.fmt(name)
            p[sh] = self.pe_frac - fmt.frac_len
            p[tr] = self.trunc(name)
            p[lo], p[hi] = fmt.min_raw, fmt.max_raw
        sac = self.sac_acc_fmt
        p[LSH_ES2] = sac.frac_len - 2 * self.fmt("e_sac").frac_len
        p[LSH_FS2] = sac.frac_len - 2 * self.fmt("f_sac").frac_len
        p[LO_SAC], p[HI_SAC] = sac.min_raw, sac.max_raw
        mac = self.mac_acc_fmt
        p[LO_MAC], p[HI_MAC] = mac.min_raw, mac.max_raw
        return p

    # -- serialisation

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "signals": {s: {"format": str(self.fmt(s)), "truncation": self.trunc(s)} for s in SIGNALS},
            "gain_register": str(self.gain_fmt),
            "guard_bits": self.guard_bits,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatapathConfig":
        try:
            sig = {
                s: SignalSpec(FixedFormat.parse(d["signals"][s]["format"]),
                              int(d["signals"][s].get("truncation", 0)))
                for s in SIGNALS
            }
            return cls(
                sig,
                FixedFormat.parse(d.get("gain_register", str(DEFAULT_GAIN_FORMAT))),
                int(d.get("guard_bits", DEFAULT_GUARD_BITS)),
                d.get("role", CORE_ACCURATE),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"invalid datapath config: {exc}") from exc


# ---------------------------------------------------------------- fixed-point backend


def _pe_products(m_re, m_im, g_re, g_im):
    if m_re.ndim == 2:
        g_re, g_im = g_re[:, None], g_im[:, None]
    return m_re * g_re - m_im * g_im, m_re * g_im + m_im * g_re


def _sac_accumulate(dp: DatapathConfig, Z, stats) -> np.ndarray:
    es = truncate_array(quantize_array(Z.real, dp.fmt("e_sac"), stats, "e_sac"), dp.trunc("e_sac"))
    fs = truncate_array(quantize_array(Z.imag, dp.fmt("f_sac"), stats, "f_sac"), dp.trunc("f_sac"))
    acc = dp.sac_acc_fmt
    lsh_e = np.int64(acc.frac_len - 2 * dp.fmt("e_sac").frac_len)
    lsh_f = np.int64(acc.frac_len - 2 * dp.fmt("f_sac").frac_len)
    den = (((es * es) << lsh_e) + ((fs * fs) << lsh_f)).sum(axis=0)
    return saturate_array(den, acc, stats, "sac_acc")


def _mac_accumulate(dp: DatapathConfig, v_re, v_im, Z, stats):
    k = dp.trunc("f_mac")
    zr = truncate_array(quantize_array(Z.real, dp.fmt("f_mac"), stats, "f_mac"), k)
    zi = truncate_array(quantize_array(Z.imag, dp.fmt("f_mac"), stats, "f_mac"), k)
    acc = dp.mac_acc_fmt
    num_re = saturate_array((v_re * zr + v_im * zi).sum(axis=0), acc, stats, "mac_acc")
    num_im = saturate_array((v_re * zi - v_im * zr).sum(axis=0), acc, stats, "mac_acc")
    return num_re, num_im


def _quantize_inputs(dp: DatapathConfig, M, V, stats):
    m_re = truncate_array(quantize_array(M.real, dp.fmt("h"), stats, "h"), dp.trunc("h"))
    m_im = truncate_array(quantize_array(M.imag, dp.fmt("t"), stats, "t"), dp.trunc("t"))
    v_re = truncate_array(quantize_array(V.real, dp.fmt("e_mac"), stats, "e_mac"), dp.trunc("e_mac"))
    v_im = truncate_array(quantize_array(V.imag, dp.fmt("e_mac"), stats, "e_mac"), dp.trunc("e_mac"))
    return m_re, m_im, v_re, v_im


class _FixedSession(KernelSession):
    def __init__(self, problem: CalibrationProblem, dp: DatapathConfig):
        super().__init__(problem)
        self.dp = dp
        self.core_tag = dp.role
        self.stats = QuantStats()
        acc_bits = max(dp.sac_acc_fmt.word_len - dp.guard_bits, dp.mac_acc_fmt.word_len - dp.guard_bits)
        if acc_bits + math.ceil(math.log2(max(problem.P, 2))) > 63:
            raise ValidationError(f"P={problem.P} would overflow the int64 accumulators")
        self.den_floor = math.ldexp(1.0, -dp.sac_acc_fmt.frac_len)
        self.m_re, self.m_im, self.v_re, self.v_im = (
            np.ascontiguousarray(a) for a in _quantize_inputs(dp, problem.M, problem.V, self.stats)
        )
        self.params = dp.kernel_params()

    def _gain_register(self, g):
        fmt = self.dp.gain_fmt
        return (np.ascontiguousarray(quantize_array(g.real, fmt, self.stats, "gain")),
                np.ascontiguousarray(quantize_array(g.imag, fmt, self.stats, "gain")))

    def z_kernel(self, g_prev, i):
        zr, zi = _pe_products(self.m_re, self.m_im, *self._gain_register(g_prev))
        f = self.dp.pe_frac
        return raw_to_float(zr, f) + 1j * raw_to_float(zi, f)

    def sac_kernel(self, Z, i):
        return raw_to_float(_sac_accumulate(self.dp, Z, self.stats), self.dp.sac_acc_fmt.frac_len)

    def mac_kernel(self, Z, i):
        num_re, num_im = _mac_accumulate(self.dp, self.v_re, self.v_im, Z, self.stats)
        f = self.dp.mac_acc_fmt.frac_len
        return raw_to_float(num_re, f) + 1j * raw_to_float(num_im, f)

    def fused(self, g_prev, i):
        g_re, g_im = self._gain_register(g_prev)
        num_re, num_im, den, sat = kernels.fx_iteration(
            self.m_re, self.m_im, self.v_re, self.v_im, g_re, g_im, self.params)
        P2 = self.P * self.P
        for name, n_ops, n_sat in zip(SAT_SIGNALS, (P2, P2, 2 * P2, self.P, 2 * self.P), sat):
            self.stats.record(n_ops, int(n_sat), name)
        fm = self.dp.mac_acc_fmt.frac_len
        return (raw_to_float(num_re, fm) + 1j * raw_to_float(num_im, fm),
                raw_to_float(den, self.dp.sac_acc_fmt.frac_len))


class FixedPointBackend(ArithmeticBackend):
    """Bit-accurate model of one core's datapath."""

    def __init__(self, dp: DatapathConfig):
        self.dp = dp
        self.tag = dp.role

    def bind(self, problem):
        return _FixedSession(problem, self.dp)

    def z_column(self, M_col, g_prev):
        dp = self.dp
        M_col = np.asarray(M_col, dtype=np.complex128)
        g_prev = np.asarray(g_prev, dtype=np.complex128)
        m_re = truncate_array(quantize_array(M_col.real, dp.fmt("h")), dp.trunc("h"))
        m_im = truncate_array(quantize_array(M_col.imag, dp.fmt("t")), dp.trunc("t"))
        g_re = quantize_array(g_prev.real, dp.gain_fmt)
        g_im = quantize_array(g_prev.imag, dp.gain_fmt)
        zr, zi = _pe_products(m_re, m_im, g_re, g_im)
        return raw_to_float(zr, dp.pe_frac) + 1j * raw_to_float(zi, dp.pe_frac)

    def gain_update(self, V_col, Z_col, p=0, i=0, stats=None):
        dp = self.dp
        V_col = np.asarray(V_col, dtype=np.complex128)
        Z_col = np.asarray(Z_col, dtype=np.complex128)
        k = dp.trunc("e_mac")
        v_re = truncate_array(quantize_array(V_col.real, dp.fmt("e_mac"), stats, "e_mac"), k)
        v_im = truncate_array(quantize_array(V_col.imag, dp.fmt("e_mac"), stats, "e_mac"), k)
        den = int(_sac_accumulate(dp, Z_col, stats))
        if den < 1:
            raise SingularDenominatorError(p, i, math.ldexp(den, -dp.sac_acc_fmt.frac_len))
        num_re, num_im = _mac_accumulate(dp, v_re, v_im, Z_col, stats)
        fm = dp.mac_acc_fmt.frac_len
        num = complex(math.ldexp(int(num_re), -fm), math.ldexp(int(num_im), -fm))
        return num / math.ldexp(den, -dp.sac_acc_fmt.frac_len)


def make_backend(dp: DatapathConfig) -> FixedPointBackend:
    """Backend evaluating each iteration through the datapath ``dp``."""
    if not isinstance(dp, DatapathConfig):
        raise ValidationError(f"expected a DatapathConfig, got {type(dp).__name__}")
    return FixedPointBackend(dp)


# ---------------------------------------------------------------- heterogeneous scheduling


class _HeteroSession(KernelSession):
    def __init__(self, problem, accurate: KernelSession, approximate: KernelSession, n_ax: int):
        super().__init__(problem)
        self.accurate = accurate
        self.approximate = approximate
        self.n_ax = n_ax

    def _active(self, i):
        return self.approximate if i <= self.n_ax else self.accurate

    @property
    def stats(self):
        merged = QuantStats()
        for sess in (self.approximate, self.accurate):
            if getattr(sess, "stats", None) is not None:
                merged.merge(sess.stats)
        return merged

    def core(self, i):
        return CORE_APPROXIMATE if i <= self.n_ax else CORE_ACCURATE

    def z_kernel(self, g_prev, i):
        return self._active(i).z_kernel(g_prev, i)

    def mac_kernel(self, Z, i):
        return self._active(i).mac_kernel(Z, i)

    def sac_kernel(self, Z, i):
        return self._active(i).sac_kernel(Z, i)

    def fused(self, g_prev, i):
        return self._active(i).fused(g_prev, i)

    def divide(self, num, den, i):
        return self._active(i).divide(num, den, i)


class HeteroBackend(ArithmeticBackend):
    """Iterations ``1..n_ax`` on ``approximate``, the rest on ``accurate``."""

    def __init__(self, accurate: ArithmeticBackend, approximate: ArithmeticBackend, n_ax: int):
        if isinstance(n_ax, bool) or int(n_ax) != n_ax or n_ax < 0:
            raise ValidationError(f"N_ax must be a non-negative integer, got {n_ax!r}")
        self.accurate = accurate
        self.approximate = approximate
        self.n_ax = int(n_ax)

    def bind(self, problem):
        return _HeteroSession(problem, self.accurate.bind(problem),
                              self.approximate.bind(problem), self.n_ax)

    def z_column(self, M_col, g_prev):
        return self.accurate.z_column(M_col, g_prev)

    def gain_update(self, V_col, Z_col, p=0, i=0):
        return self.accurate.gain_update(V_col, Z_col, p, i)


def run_hetero(problem: CalibrationProblem, cfg: StefcalConfig | None,
               dp_acc: DatapathConfig, dp_ax: DatapathConfig, N_ax: int,
               reference_trace: RunTrace | None = None) -> RunTrace:
    """Run with the first ``N_ax`` iterations on the approximate core."""
    backend = HeteroBackend(make_backend(dp_acc), make_backend(dp_ax), N_ax)
    return run(problem, cfg, backend, reference_trace)


# ---------------------------------------------------------------- energy


@dataclass(frozen=True)
class EnergyModel:
    """Per-iteration powers and iteration counts of the two cores.

    With ``equal_frequency`` both cores take the same time per iteration and
    energies reduce to powers.  Otherwise ``t_acc`` and ``t_ax`` give the
    per-iteration durations.
    """

    P_acc: float
    P_ax: float
    N_acc: int
    N_ax: int
    equal_frequency: bool = True
    t_acc: float = 1.0
    t_ax: float = 1.0

    def __post_init__(self):
        if not (self.P_acc > 0 and math.isfinite(self.P_acc)):
            raise ValidationError(f"P_acc must be finite and > 0, got {self.P_acc}")
        if not (self.P_ax >= 0 and math.isfinite(self.P_ax)):
            raise ValidationError(f"P_ax must be finite and >= 0, got {self.P_ax}")
        for name in ("N_acc", "N_ax"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v:
                raise ValidationError(f"{name} must be an integer, got {v!r}")
        if self.N_acc < 1:
            raise ValidationError(f"N_acc must be >= 1, got {self.N_acc}")
        if not 0 <= self.N_ax <= self.N_acc:
            raise ValidationError(f"N_ax must be in 0..N_acc={self.N_acc}, got {self.N_ax}")
        if not (self.t_acc > 0 and self.t_ax > 0):
            raise ValidationError("iteration times must be > 0")
        if self.equal_frequency and self.t_ax != self.t_acc:
            raise ValidationError("equal_frequency requires t_ax == t_acc")


@dataclass(frozen=True)
class EnergyReport:
    S_E: float
    E_acc: float
    E_ax: float
    E_a: float
    E_h: float

    def __float__(self):
        return self.S_E

    def as_dict(self) -> dict:
        return {"S_E": self.S_E, "S_E_percent": 100.0 * self.S_E, "E_acc": self.E_acc,
                "E_ax": self.E_ax, "E_a": self.E_a, "E_h": self.E_h,
                "saved": self.E_a - self.E_h}


def energy_savings(em: EnergyModel) -> EnergyReport:
    """Relative saving of the two-core schedule over accurate-only execution.

    ``S_E = (E_acc - E_ax) * N_ax / (E_acc * N_acc)``; with equal clock
    frequencies the per-iteration energies are just the powers.
    """
    E_acc = em.P_acc * em.t_acc
    E_ax = em.P_ax * (em.t_acc if em.equal_frequency else em.t_ax)
    E_a = E_acc * em.N_acc
    E_h = E_ax * em.N_ax + E_acc * (em.N_acc - em.N_ax)
    S_E = (E_acc - E_ax) * em.N_ax / (E_acc * em.N_acc)
    return EnergyReport(S_E=S_E, E_acc=E_acc, E_ax=E_ax, E_a=E_a, E_h=E_h)


@dataclass(frozen=True)
class LinearPowerModel:
    """Approximate-core power as an affine function of total truncated bits.

    Anchored at zero truncation (``p_full``) and at ``anchor_bits`` truncated
    bits (``p_anchor``).  Values are an estimate, not a synthesis result.
    """

    p_full: float = ACCURATE_CORE_POWER_MW
    p_anchor: float = APPROXIMATE_CORE_POWER_MW
    anchor_bits: int = sum(APPROX_TRUNCATION.values())

    def __post_init__(self):
        if self.anchor_bits <= 0:
            raise ValidationError("anchor_bits must be > 0")
        if not (self.p_full > 0 and self.p_anchor >= 0):
            raise ValidationError("powers must be positive")

    def __call__(self, truncation) -> float:
        bits = sum(_as_truncation(truncation).values())
        slope = (self.p_full - self.p_anchor) / self.anchor_bits
        return max(self.p_full - slope * bits, 0.0)


@dataclass(frozen=True)
class DsePoint:
    truncation: tuple
    N_ax: int
    N_acc: int
    P_ax: float
    P_acc: float
    evaluations: tuple = field(default=(), compare=False)

    @property
    def S_E(self) -> float:
        return energy_savings(EnergyModel(self.P_acc, self.P_ax, self.N_acc, self.N_ax)).S_E

    def as_dict(self) -> dict:
        return {
            "truncation": dict(zip(SIGNALS, self.truncation)),
            "N_ax": self.N_ax,
            "N_acc": self.N_acc,
            "P_ax_mW": self.P_ax,
            "P_acc_mW": self.P_acc,
            "S_E": self.S_E,
            "evaluations": [{"N_ax": n, "accepted": ok} for n, ok in self.evaluations],
        }


def max_feasible_n_ax(problem, cfg, dp_acc, dp_ax, reference: RunTrace):
    """Largest ``N_ax`` whose heterogeneous run passes quality acceptance.

    Binary search on ``[0, N_acc]``; ``N_ax = 0`` reproduces the reference
    and is feasible by construction.  Returns the count and the
    ``(N_ax, accepted)`` pairs evaluated.
    """
    cache: dict[int, bool] = {0: True}

    def ok(n):
        if n not in cache:
            trace = run_hetero(problem, cfg, dp_acc, dp_ax, n, reference)
            cache[n] = quality_acceptance(trace, reference, cfg).accepted
        return cache[n]

    N = reference.iterations
    if ok(N):
        best = N
    else:
        lo, hi = 0, N
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                lo = mid
            else:
                hi = mid
        best = lo
    return best, tuple(sorted(cache.items()))


def _dse_task(args):
    problem, cfg, dp_acc, trunc, reference = args
    dp_ax = dp_acc.with_truncation(trunc)
    return max_feasible_n_ax(problem, cfg, dp_acc, dp_ax, reference)


def explore_dse(problem: CalibrationProblem, cfg: StefcalConfig | None,
                dp_acc: DatapathConfig, candidates, power_model=None,
                P_acc: float | None = None, jobs: int = 1) -> list:
    """Rank truncation vectors by energy saving.

    Parameters
    ----------
    candidates : iterable
        Truncation vectors, as 6-tuples in ``SIGNALS`` order or mappings.
    power_model : callable, optional
        Maps a truncation vector to approximate-core power;
        :class:`LinearPowerModel` by default.
    P_acc : float, optional
        Accurate-core power; defaults to ``power_model`` at zero truncation.
    jobs : int
        Worker processes for evaluating candidates.

    Returns
    -------
    list of DsePoint
        Sorted by ``S_E`` descending, ties kept in candidate order.
    """
    cfg = cfg or StefcalConfig()
    power_model = power_model or LinearPowerModel()
    if P_acc is None:
        P_acc = power_model((0,) * len(SIGNALS))
    truncs = [tuple(_as_truncation(c)[s] for s in SIGNALS) for c in candidates]
    reference = run(problem, cfg, make_backend(dp_acc))
    if not reference.converged:
        raise HarnessError("accurate-core reference run did not converge")
    tasks = [(problem, cfg, dp_acc, t, reference) for t in truncs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_dse_task, tasks))
    else:
        results = [_dse_task(t) for t in tasks]
    points = [
        DsePoint(t, n_ax, reference.iterations, float(power_model(t)), float(P_acc), evals)
        for t, (n_ax, evals) in zip(truncs, results)
    ]
    order = sorted(range(len(points)), key=lambda k: (-points[k].S_E, k))
    return [points[k] for k in order]


# ---------------------------------------------------------------- config files


@dataclass(frozen=True, eq=False)
class AccelConfig:
    """Contents of an accelerator config file."""

    accurate: DatapathConfig
    approximate: DatapathConfig
    power_model: LinearPowerModel

    def to_dict(self) -> dict:
        return {
            "accurate": self.accurate.to_dict(),
            "approximate_truncation": dict(zip(SIGNALS, self.approximate.truncation)),
            "energy": {"P_acc_mW": self.power_model.p_full,
                       "P_ax_mW": self.power_model.p_anchor},
        }


def default_accel_config() -> AccelConfig:
    return AccelConfig(DatapathConfig.accurate(), DatapathConfig.approximate(), LinearPowerModel())


def accel_config_from_dict(d: Mapping) -> AccelConfig:
    """Build an :class:`AccelConfig`; absent sections take the defaults.

    Schema::

        {
          "accurate": {"signals": {"h": {"format": "Q18.17", "truncation": 0}, ...},
                       "gain_register": "Q28.25", "guard_bits": 7},
          "approximate_truncation": {"h": 0, "t": 0, "e_sac": 8, ...},
          "energy": {"P_acc_mW": 3.55, "P_ax_mW": 2.08}
        }

    The power anchor sits at the total of ``approximate_truncation``.
    """
    unknown = set(d) - {"accurate", "approximate_truncation", "energy"}
    if unknown:
        raise ValidationError(f"unknown config sections {sorted(unknown)}")
    acc = DatapathConfig.from_dict(d["accurate"]) if "accurate" in d else DatapathConfig.accurate()
    trunc = _as_truncation(d.get("approximate_truncation", APPROX_TRUNCATION))
    ax = acc.with_truncation(trunc)
    e = d.get("energy", {})
    bits = sum(trunc.values())
    pm = LinearPowerModel(float(e.get("P_acc_mW", ACCURATE_CORE_POWER_MW)),
                          float(e.get("P_ax_mW", APPROXIMATE_CORE_POWER_MW)),
                          bits if bits > 0 else sum(APPROX_TRUNCATION.values()))
    return AccelConfig(acc, ax, pm)


def load_accel_config(path) -> AccelConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    return accel_config_from_dict(d)


def save_accel_config(cfg: AccelConfig, path) -> Path:
    return dump_json(path, cfg.to_dict())
