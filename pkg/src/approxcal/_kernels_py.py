"""numpy implementation of the fused per-iteration kernels.

This is the fallback used when the compiled extension is unavailable, and
the reference the compiled version is tested against bit for bit.

Double-precision arithmetic is spelled out on separate real and imaginary
arrays so that no fused multiply-add can change the rounding, and every
reduction runs over axis 0 of a C-ordered array, which numpy accumulates
row by row in index order.
"""

from __future__ import annotations

import numpy as np

# Layout of the int64 parameter vector consumed by fx_iteration.
SHIFT_ES, TRUNC_ES, LO_ES, HI_ES = 0, 1, 2, 3
SHIFT_FS, TRUNC_FS, LO_FS, HI_FS = 4, 5, 6, 7
SHIFT_ZM, TRUNC_ZM, LO_ZM, HI_ZM = 8, 9, 10, 11
LSH_ES2, LSH_FS2, LO_SAC, HI_SAC, LO_MAC, HI_MAC = 12, 13, 14, 15, 16, 17
N_PARAMS = 18

# Order of the saturation counters returned by fx_iteration.
SAT_SIGNALS = ("e_sac", "f_sac", "f_mac", "sac_acc", "mac_acc")


def ref_iteration(m_re, m_im, v_re, v_im, g_re, g_im):
    """Numerator ``V[:, p]^H Z[:, p]`` and denominator ``|Z[:, p]|^2`` for all p.

    ``Z[k, p] = M[k, p] * g[k]``.  Matrices are passed as C-ordered float64
    real and imaginary parts.

    Returns
    -------
    num_re, num_im, den : (P,) float64
    """
    gr, gi = g_re[:, None], g_im[:, None]
    zr = m_re * gr - m_im * gi
    zi = m_re * gi + m_im * gr
    num_re = (v_re * zr + v_im * zi).sum(axis=0)
    num_im = (v_re * zi - v_im * zr).sum(axis=0)
    den = (zr * zr + zi * zi).sum(axis=0)
    return num_re, num_im, den


def _requant(full, shift, trunc, lo, hi):
    s = np.int64(shift)
    if shift > 0:
        q = full >> s
        r = full - (q << s)
        half = np.int64(1) << np.int64(shift - 1)
        q = q + ((r > half) | ((r == half) & ((q & 1) == 1)))
    else:
        q = full << np.int64(-shift)
    n_sat = int(np.count_nonzero(q > hi) + np.count_nonzero(q < lo))
    if n_sat:
        q = np.clip(q, lo, hi)
    if trunc:
        t = np.int64(trunc)
        q = (q >> t) << t
    return q, n_sat


def _clip_acc(acc, lo, hi):
    n_sat = int(np.count_nonzero(acc > hi) + np.count_nonzero(acc < lo))
    if n_sat:
        acc = np.clip(acc, lo, hi)
    return acc, n_sat


def fx_iteration(m_re, m_im, v_re, v_im, g_re, g_im, params):
    """Integer datapath for one iteration.

    Parameters
    ----------
    m_re, m_im : (P, P) int64
        Raw model covariance at the PE input format.
    v_re, v_im : (P, P) int64
        Raw measured covariance on the MAC ``e_mac`` bus, already truncated.
    g_re, g_im : (P,) int64
        Raw gain register contents.
    params : (18,) int64
        Rescale shifts, truncation bits and saturation bounds, see the
        index constants in this module.

    Returns
    -------
    num_re, num_im, den : (P,) int64
        Raw MAC and SAC accumulator contents.
    sat : (5,) int64
        Saturation counts in :data:`SAT_SIGNALS` order.
    """
    p = [int(x) for x in params]
    gr, gi = g_re[:, None], g_im[:, None]
    # PE: exact complex products
    zr_full = m_re * gr - m_im * gi
    zi_full = m_re * gi + m_im * gr

    es, s_es = _requant(zr_full, p[SHIFT_ES], p[TRUNC_ES], p[LO_ES], p[HI_ES])
    fs, s_fs = _requant(zi_full, p[SHIFT_FS], p[TRUNC_FS], p[LO_FS], p[HI_FS])
    zr, s_zr = _requant(zr_full, p[SHIFT_ZM], p[TRUNC_ZM], p[LO_ZM], p[HI_ZM])
    zi, s_zi = _requant(zi_full, p[SHIFT_ZM], p[TRUNC_ZM], p[LO_ZM], p[HI_ZM])

    den = ((es * es) << np.int64(p[LSH_ES2])) + ((fs * fs) << np.int64(p[LSH_FS2]))
    den, s_sac = _clip_acc(den.sum(axis=0), p[LO_SAC], p[HI_SAC])

    num_re, s_mr = _clip_acc((v_re * zr + v_im * zi).sum(axis=0), p[LO_MAC], p[HI_MAC])
    num_im, s_mi = _clip_acc((v_re * zi - v_im * zr).sum(axis=0), p[LO_MAC], p[HI_MAC])

    sat = np.array([s_es, s_fs, s_zr + s_zi, s_sac, s_mr + s_mi], dtype=np.int64)
    return num_re, num_im, den, sat
