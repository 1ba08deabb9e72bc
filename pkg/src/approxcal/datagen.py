"""Synthetic calibration problems and their on-disk formats.

The generator stands in for telescope data.  The model covariance is a
point-source sky: a few unit-modulus source responses with geometrically
decaying fluxes, plus diagonal loading, scaled so the largest entry sits
just below 1.  That keeps every entry inside the fixed-point input range
while using most of its resolution.

Binary layout (little-endian)::

    offset  size  field
    0       8     magic  b"APXCALPB"
    8       2     version (uint16, currently 1)
    10      2     flags   (bit 0: g_true present)
    12      4     P       (uint32, antenna count)
    16      8     noise_sigma (float64)
    24      ...   M, V as row-major complex128, then g_true if flagged
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._fileio import atomic_write_bytes, ftoa, read_csv, write_csv
from .errors import (
    DimensionMismatchError,
    HeaderError,
    TruncatedPayloadError,
    ValidationError,
)

MAGIC = b"APXCALPB"
VERSION = 1
_HEADER = struct.Struct("<8sHHId")
_FLAG_GTRUE = 0x1
_C16 = np.dtype("<c16")

DEFAULT_PHASE_SPREAD = math.pi / 3


@dataclass(frozen=True, eq=False)
class CalibrationProblem:
    """Model covariance ``M``, measured covariance ``V`` and optional truth.

    Arrays are copied and frozen on construction.
    """

    M: np.ndarray
    V: np.ndarray
    g_true: np.ndarray | None = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        M = np.array(self.M, dtype=np.complex128, order="C")
        V = np.array(self.V, dtype=np.complex128, order="C")
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise ValidationError(f"M must be a non-empty square matrix, got shape {M.shape}")
        if V.shape != M.shape:
            raise ValidationError(f"V shape {V.shape} does not match M shape {M.shape}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(V))):
            raise ValidationError("M and V must be finite")
        g = None
        if self.g_true is not None:
            g = np.array(self.g_true, dtype=np.complex128)
            if g.shape != (M.shape[0],):
                raise ValidationError(f"g_true must have length {M.shape[0]}, got shape {g.shape}")
            if not np.all(np.isfinite(g)):
                raise ValidationError("g_true must be finite")
            g.setflags(write=False)
        sigma = float(self.noise_sigma)
        if not (sigma >= 0.0 and math.isfinite(sigma)):
            raise ValidationError(f"noise_sigma must be finite and >= 0, got {sigma}")
        M.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "g_true", g)
        object.__setattr__(self, "noise_sigma", sigma)

    @property
    def P(self) -> int:
        return self.M.shape[0]

    def equals(self, other: "CalibrationProblem") -> bool:
        """Bitwise equality of every field."""
        if not isinstance(other, CalibrationProblem):
            return False
        same_g = (self.g_true is None and other.g_true is None) or (
            self.g_true is not None
            and other.g_true is not None
            and self.g_true.tobytes() == other.g_true.tobytes()
        )
        return (
            self.M.tobytes() == other.M.tobytes()
            and self.V.tobytes() == other.V.tobytes()
            and same_g
            and struct.pack("<d", self.noise_sigma) == struct.pack("<d", other.noise_sigma)
        )


def apply_gains(g, M) -> np.ndarray:
    """``diag(g) @ M @ diag(g)^H`` without forming the diagonal matrices."""
    g = np.asarray(g)
    return (g[:, None] * M) * g.conj()[None, :]


def synthesize(P: int = 124, gain_spread: float = 0.2, noise_sigma: float = 0.0,
               rank: int = 3, seed: int = 0, *, phase_spread: float = DEFAULT_PHASE_SPREAD,
               flux_decay: float = 0.5, loading: float = 0.01,
               peak: float = 0.99) -> CalibrationProblem:
    """Draw a seeded synthetic problem.

    Parameters
    ----------
    P : int
        Antenna count.
    gain_spread : float
        Gain amplitudes are uniform in ``[1 - gain_spread, 1 + gain_spread]``.
    noise_sigma : float
        Scale of the Hermitian Gaussian noise added to ``V``.
    rank : int
        Number of point sources in the sky model.
    seed : int
        Seed for ``numpy.random.default_rng``.
    phase_spread : float
        Gain phases are uniform in ``[-phase_spread, phase_spread]`` radians.
        ``pi`` gives fully random phases.
    flux_decay : float
        Flux ratio between consecutive sources.
    loading : float
        Diagonal loading relative to the total flux.
    peak : float
        ``max |M_ij|`` after normalisation.

    Returns
    -------
    CalibrationProblem
    """
    if isinstance(P, bool) or int(P) != P or P < 1:
        raise ValidationError(f"P must be a positive integer, got {P!r}")
    if isinstance(rank, bool) or int(rank) != rank or rank < 1:
        raise ValidationError(f"rank must be a positive integer, got {rank!r}")
    if not 0.0 <= gain_spread < 1.0:
        raise ValidationError(f"gain_spread must be in [0, 1), got {gain_spread}")
    if not (noise_sigma >= 0.0 and math.isfinite(noise_sigma)):
        raise ValidationError(f"noise_sigma must be finite and >= 0, got {noise_sigma}")
    if not 0.0 <= phase_spread <= math.pi:
        raise ValidationError(f"phase_spread must be in [0, pi], got {phase_spread}")
    if not (0.0 < flux_decay <= 1.0 and loading >= 0.0 and 0.0 < peak <= 1.0):
        raise ValidationError("flux_decay must be in (0, 1], loading >= 0, peak in (0, 1]")
    P, rank = int(P), int(rank)

    rng = np.random.default_rng(seed)
    flux = flux_decay ** np.arange(rank)
    resp = np.exp(1j * rng.uniform(-np.pi, np.pi, (P, rank))) * np.sqrt(flux)
    M = resp @ resp.conj().T + loading * flux.sum() * np.eye(P)
    M = 0.5 * (M + M.conj().T)
    M *= peak / np.abs(M).max()

    amp = rng.uniform(1.0 - gain_spread, 1.0 + gain_spread, P)
    phase = rng.uniform(-phase_spread, phase_spread, P)
    g = amp * np.exp(1j * phase)

    V = apply_gains(g, M)
    if noise_sigma > 0.0:
        N = noise_sigma * (rng.standard_normal((P, P)) + 1j * rng.standard_normal((P, P)))
        # Hermitian part of N keeps a complex std-dev of noise_sigma off the diagonal
        V = V + 0.5 * (N + N.conj().T)
    return CalibrationProblem(M=M, V=V, g_true=g, noise_sigma=noise_sigma)


# ---------------------------------------------------------------- binary I/O


def problem_to_bytes(problem: CalibrationProblem) -> bytes:
    flags = _FLAG_GTRUE if problem.g_true is not None else 0
    parts = [
        _HEADER.pack(MAGIC, VERSION, flags, problem.P, problem.noise_sigma),
        problem.M.astype(_C16).tobytes(order="C"),
        problem.V.astype(_C16).tobytes(order="C"),
    ]
    if problem.g_true is not None:
        parts.append(problem.g_true.astype(_C16).tobytes())
    return b"".join(parts)


def _payload_size(P: int, has_g: bool) -> int:
    return 2 * P * P * _C16.itemsize + (P * _C16.itemsize if has_g else 0)


def _matching_dimension(n_bytes: int, has_g: bool) -> int | None:
    # smallest P' whose payload size is exactly n_bytes, if any
    item = _C16.itemsize
    P = int(math.isqrt(max(n_bytes // (2 * item), 0)))
    for cand in (P - 1, P, P + 1):
        if cand >= 1 and _payload_size(cand, has_g) == n_bytes:
            return cand
    return None


def problem_from_bytes(data: bytes) -> CalibrationProblem:
    """Parse the binary container, raising a located error on any defect."""
    if len(data) < _HEADER.size:
        raise HeaderError(
            f"file holds {len(data)} bytes, fewer than the {_HEADER.size}-byte header",
            offset=len(data),
        )
    magic, version, flags, P, sigma = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise HeaderError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != VERSION:
        raise HeaderError(f"unsupported version {version}", offset=8)
    if flags & ~_FLAG_GTRUE:
        raise HeaderError(f"unknown flag bits 0x{flags:04x}", offset=10)
    if P < 1:
        raise HeaderError("antenna count P must be >= 1", offset=12)
    if not (sigma >= 0.0 and math.isfinite(sigma)):
        raise HeaderError(f"invalid noise_sigma {sigma!r}", offset=16)

    has_g = bool(flags & _FLAG_GTRUE)
    payload = len(data) - _HEADER.size
    expected = _payload_size(P, has_g)
    if payload != expected:
        other = _matching_dimension(payload, has_g)
        if other is not None:
            raise DimensionMismatchError(
                f"header declares P={P} but the payload holds {other}x{other} matrices",
                offset=12,
            )
        if payload < expected:
            raise TruncatedPayloadError(
                f"payload truncated: expected {expected} bytes for P={P}, found {payload}",
                offset=len(data),
            )
        raise DimensionMismatchError(
            f"{payload - expected} trailing bytes after the P={P} payload",
            offset=_HEADER.size + expected,
        )

    n = P * P
    flat = np.frombuffer(data, dtype=_C16, offset=_HEADER.size)
    M = flat[:n].reshape(P, P)
    V = flat[n:2 * n].reshape(P, P)
    g = flat[2 * n:2 * n + P] if has_g else None
    return CalibrationProblem(M=M, V=V, g_true=g, noise_sigma=sigma)


def save_problem(problem: CalibrationProblem, path) -> Path:
    return atomic_write_bytes(path, problem_to_bytes(problem))


def load_problem(path) -> CalibrationProblem:
    return problem_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------- CSV export

CSV_HEADER = ["matrix", "row", "col", "re", "im"]


def save_problem_csv(problem: CalibrationProblem, path) -> Path:
    """Long-format CSV: one ``re,im`` pair per matrix entry."""
    rows = [["noise_sigma", 0, 0, ftoa(problem.noise_sigma), ftoa(0.0)]]
    for name, A in (("M", problem.M), ("V", problem.V)):
        for (r, c), z in np.ndenumerate(A):
            rows.append([name, r, c, ftoa(z.real), ftoa(z.imag)])
    if problem.g_true is not None:
        for r, z in enumerate(problem.g_true):
            rows.append(["g_true", r, 0, ftoa(z.real), ftoa(z.imag)])
    return write_csv(path, CSV_HEADER, rows)


def load_problem_csv(path) -> CalibrationProblem:
    header, rows = read_csv(path)
    if header != CSV_HEADER:
        raise HeaderError(f"unexpected CSV header {header}", offset=0)
    entries: dict[str, dict] = {}
    for row in rows:
        name, r, c, re_, im_ = row
        entries.setdefault(name, {})[(int(r), int(c))] = complex(float(re_), float(im_))
    P = int(math.isqrt(len(entries.get("M", {}))))

    def mat(name):
        A = np.zeros((P, P), dtype=np.complex128)
        for (r, c), z in entries[name].items():
            A[r, c] = z
        return A

    g = None
    if "g_true" in entries:
        g = np.array([entries["g_true"][(r, 0)] for r in range(P)])
    sigma = entries.get("noise_sigma", {(0, 0): 0.0})[(0, 0)].real
    return CalibrationProblem(M=mat("M"), V=mat("V"), g_true=g, noise_sigma=sigma)
