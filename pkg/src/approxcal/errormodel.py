"""Statistical error injection at kernel outputs.

A kernel output ``K`` is replaced by ``K * (1 + eps)`` with
``eps = (EP * n + EM) / 100`` and ``n`` standard normal.  At each iteration
every configured site draws one uniform number; the site injects when that
number is below ``ER / 100`` and the iteration is within the ``N_ax``
budget.  An injecting site perturbs every element of its output with an
independent draw.  ``N_ax = None`` removes the budget.

Uniform and Gaussian draws come from two independent streams spawned from
the run's seed, so changing ``EP`` never moves the injection pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._fileio import ftoa, read_csv, write_csv
from .errors import ValidationError
from .stefcal import ArithmeticBackend, KernelSession, Step

SITE_Z = "Z_kernel"
SITE_MAC = "MAC_kernel"
SITE_SAC = "SAC_kernel"
SITES = (SITE_Z, SITE_MAC, SITE_SAC)


@dataclass(frozen=True)
class ErrorModelConfig:
    """Parameters of one injection experiment.

    Parameters
    ----------
    EM : float
        Mean relative error in percent.
    EP : float
        Standard deviation of the relative error in percent.
    ER : float
        Percentage of eligible iterations that inject.
    N_ax : int or None
        Only iterations ``1..N_ax`` are eligible; ``None`` means all.
    sites : tuple of str
        Kernel outputs to perturb, a non-empty subset of :data:`SITES`.
    seed : int or tuple of int
        Entropy for the run's RNG pair.
    """

    EM: float = 0.0
    EP: float = 0.0
    ER: float = 100.0
    N_ax: int | None = None
    sites: tuple = (SITE_Z,)
    seed: int | tuple = 0

    def __post_init__(self):
        if not math.isfinite(self.EM):
            raise ValidationError(f"EM must be finite, got {self.EM}")
        if not (self.EP >= 0 and math.isfinite(self.EP)):
            raise ValidationError(f"EP must be finite and >= 0, got {self.EP}")
        if not 0.0 <= self.ER <= 100.0:
            raise ValidationError(f"ER must be in [0, 100], got {self.ER}")
        if self.N_ax is not None and (
            isinstance(self.N_ax, bool) or int(self.N_ax) != self.N_ax or self.N_ax < 0
        ):
            raise ValidationError(f"N_ax must be None or a non-negative integer, got {self.N_ax!r}")
        sites = tuple(self.sites)
        if not sites or any(s not in SITES for s in sites) or len(set(sites)) != len(sites):
            raise ValidationError(f"sites must be a non-empty subset of {SITES}, got {sites}")
        object.__setattr__(self, "sites", tuple(s for s in SITES if s in sites))

    @property
    def unlimited(self) -> bool:
        return self.N_ax is None

    @property
    def negative_mean(self) -> bool:
        return self.EM < 0


@dataclass(frozen=True)
class InjectionDecision:
    """One site's outcome at one iteration.

    ``epsilon_g`` is the mean of the element draws when the site injected and
    ``None`` otherwise.
    """

    i: int
    site: str
    inject: bool
    epsilon_g: float | None
    uniform: float


def draw_epsilon(EM: float, EP: float, rng: np.random.Generator, size=None):
    """Relative error ``(EP * n + EM) / 100`` with ``n ~ N(0, 1)``."""
    n = rng.standard_normal(size)
    return (EP * n + EM) / 100.0


def apply_injection(K_op, epsilon_g):
    """``K_op * (1 + epsilon_g)``, elementwise for arrays."""
    return K_op * (1.0 + epsilon_g)


def rng_pair(seed):
    """Independent (uniform, gaussian) generators derived from ``seed``."""
    s_uniform, s_gauss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(s_uniform), np.random.default_rng(s_gauss)


class _InjectingSession(KernelSession):
    def __init__(self, inner: KernelSession, cfg: ErrorModelConfig):
        super().__init__(inner.problem)
        self.inner = inner
        self.cfg = cfg
        self.uniform_rng, self.gauss_rng = rng_pair(cfg.seed)
        self.decision_log: list[InjectionDecision] = []

    @property
    def stats(self):
        return getattr(self.inner, "stats", None)

    def core(self, i):
        return self.inner.core(i)

    def _perturb(self, K):
        eps = draw_epsilon(self.cfg.EM, self.cfg.EP, self.gauss_rng, np.shape(K))
        return apply_injection(K, eps), float(np.mean(eps))

    def update(self, g_prev, i):
        cfg = self.cfg
        eligible = cfg.N_ax is None or i <= cfg.N_ax
        draws = {}
        for site in cfg.sites:
            u = float(self.uniform_rng.random())
            draws[site] = (u, eligible and u < cfg.ER / 100.0)

        eps_mean = {}
        if not any(hit for _, hit in draws.values()):
            num, den = self.inner.fused(g_prev, i)
        else:
            Z = self.inner.z_kernel(g_prev, i)
            if draws.get(SITE_Z, (0, False))[1]:
                Z, eps_mean[SITE_Z] = self._perturb(Z)
            num = self.inner.mac_kernel(Z, i)
            if draws.get(SITE_MAC, (0, False))[1]:
                num, eps_mean[SITE_MAC] = self._perturb(num)
            den = self.inner.sac_kernel(Z, i)
            if draws.get(SITE_SAC, (0, False))[1]:
                den, eps_mean[SITE_SAC] = self._perturb(den)

        for site, (u, hit) in draws.items():
            self.decision_log.append(InjectionDecision(i, site, hit, eps_mean.get(site), u))
        return Step(self.inner.divide(num, den, i), self.inner.core(i), bool(eps_mean))


class InjectingBackend(ArithmeticBackend):
    """Wraps another backend and perturbs its kernel outputs."""

    def __init__(self, inner: ArithmeticBackend, cfg: ErrorModelConfig):
        self.inner = inner
        self.cfg = cfg
        self.tag = inner.tag

    def bind(self, problem):
        return _InjectingSession(self.inner.bind(problem), self.cfg)

    def z_column(self, M_col, g_prev):
        return self.inner.z_column(M_col, g_prev)

    def gain_update(self, V_col, Z_col, p=0, i=0):
        return self.inner.gain_update(V_col, Z_col, p, i)


def wrap_backend(inner: ArithmeticBackend, cfg: ErrorModelConfig) -> InjectingBackend:
    if not isinstance(cfg, ErrorModelConfig):
        raise ValidationError(f"expected an ErrorModelConfig, got {type(cfg).__name__}")
    return InjectingBackend(inner, cfg)


# ---------------------------------------------------------------- decision log

LOG_COLUMNS = ["i", "site", "inject", "epsilon_g", "uniform"]


def write_decision_log(decisions, path):
    rows = [
        [d.i, d.site, int(d.inject), "" if d.epsilon_g is None else ftoa(d.epsilon_g), ftoa(d.uniform)]
        for d in decisions
    ]
    return write_csv(path, LOG_COLUMNS, rows)


def read_decision_log(path) -> list:
    header, rows = read_csv(path)
    if header != LOG_COLUMNS:
        raise ValidationError(f"{path}: unexpected decision log header {header}")
    return [
        InjectionDecision(int(i), site, bool(int(inj)), None if e == "" else float(e), float(u))
        for i, site, inj, e, u in rows
    ]
