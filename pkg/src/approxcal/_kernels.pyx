# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused per-iteration kernels.

Same contract as ``approxcal._kernels_py``; the two are checked against each
other bit for bit.  Reductions run over rows in index order, seeded with row
zero, which is how numpy reduces axis 0 of a C-ordered array.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t

cnp.import_array()


def ref_iteration(const double[:, ::1] m_re, const double[:, ::1] m_im,
                  const double[:, ::1] v_re, const double[:, ::1] v_im,
                  const double[::1] g_re, const double[::1] g_im):
    cdef Py_ssize_t P = m_re.shape[0]
    cdef Py_ssize_t k, p
    cdef double gr, gi, mr, mi, vr, vi, zr, zi
    num_re_a = np.empty(P, dtype=np.float64)
    num_im_a = np.empty(P, dtype=np.float64)
    den_a = np.empty(P, dtype=np.float64)
    cdef double[::1] num_re = num_re_a
    cdef double[::1] num_im = num_im_a
    cdef double[::1] den = den_a
    if P == 0:
        return num_re_a, num_im_a, den_a
    with nogil:
        gr = g_re[0]
        gi = g_im[0]
        for p in range(P):
            mr = m_re[0, p]
            mi = m_im[0, p]
            zr = mr * gr - mi * gi
            zi = mr * gi + mi * gr
            vr = v_re[0, p]
            vi = v_im[0, p]
            num_re[p] = vr * zr + vi * zi
            num_im[p] = vr * zi - vi * zr
            den[p] = zr * zr + zi * zi
        for k in range(1, P):
            gr = g_re[k]
            gi = g_im[k]
            for p in range(P):
                mr = m_re[k, p]
                mi = m_im[k, p]
                zr = mr * gr - mi * gi
                zi = mr * gi + mi * gr
                vr = v_re[k, p]
                vi = v_im[k, p]
                num_re[p] += vr * zr + vi * zi
                num_im[p] += vr * zi - vi * zr
                den[p] += zr * zr + zi * zi
    return num_re_a, num_im_a, den_a


cdef inline int64_t _requant(int64_t full, int64_t shift, int64_t trunc,
                             int64_t lo, int64_t hi, int64_t* n_sat) noexcept nogil:
    cdef int64_t q, r, half
    if shift > 0:
        q = full >> shift
        r = full - (q << shift)
        half = (<int64_t>1) << (shift - 1)
        # branchless: the carry decision is data dependent and mispredicts
        q += (r > half) | ((r == half) & (q & 1))
    else:
        q = full << (-shift)
    if q > hi:
        q = hi
        n_sat[0] += 1
    elif q < lo:
        q = lo
        n_sat[0] += 1
    if trunc:
        q = (q >> trunc) << trunc
    return q


cdef inline int64_t _clip(int64_t x, int64_t lo, int64_t hi, int64_t* n_sat) noexcept nogil:
    if x > hi:
        n_sat[0] += 1
        return hi
    if x < lo:
        n_sat[0] += 1
        return lo
    return x


def fx_iteration(const int64_t[:, ::1] m_re, const int64_t[:, ::1] m_im,
                 const int64_t[:, ::1] v_re, const int64_t[:, ::1] v_im,
                 const int64_t[::1] g_re, const int64_t[::1] g_im,
                 const int64_t[::1] params):
    cdef Py_ssize_t P = m_re.shape[0]
    cdef Py_ssize_t k, p
    cdef int64_t gr, gi, mr, mi, zr_full, zi_full, es, fs, zr, zi, vr, vi
    cdef int64_t sat_es = 0, sat_fs = 0, sat_zm = 0, sat_sac = 0, sat_mac = 0
    cdef int64_t sh_es = params[0], tr_es = params[1], lo_es = params[2], hi_es = params[3]
    cdef int64_t sh_fs = params[4], tr_fs = params[5], lo_fs = params[6], hi_fs = params[7]
    cdef int64_t sh_zm = params[8], tr_zm = params[9], lo_zm = params[10], hi_zm = params[11]
    cdef int64_t lsh_es2 = params[12], lsh_fs2 = params[13]
    cdef int64_t lo_sac = params[14], hi_sac = params[15]
    cdef int64_t lo_mac = params[16], hi_mac = params[17]

    num_re_a = np.zeros(P, dtype=np.int64)
    num_im_a = np.zeros(P, dtype=np.int64)
    den_a = np.zeros(P, dtype=np.int64)
    cdef int64_t[::1] num_re = num_re_a
    cdef int64_t[::1] num_im = num_im_a
    cdef int64_t[::1] den = den_a

    with nogil:
        for k in range(P):
            gr = g_re[k]
            gi = g_im[k]
            for p in range(P):
                mr = m_re[k, p]
                mi = m_im[k, p]
                zr_full = mr * gr - mi * gi
                zi_full = mr * gi + mi * gr
                es = _requant(zr_full, sh_es, tr_es, lo_es, hi_es, &sat_es)
                fs = _requant(zi_full, sh_fs, tr_fs, lo_fs, hi_fs, &sat_fs)
                zr = _requant(zr_full, sh_zm, tr_zm, lo_zm, hi_zm, &sat_zm)
                zi = _requant(zi_full, sh_zm, tr_zm, lo_zm, hi_zm, &sat_zm)
                den[p] += ((es * es) << lsh_es2) + ((fs * fs) << lsh_fs2)
                vr = v_re[k, p]
                vi = v_im[k, p]
                num_re[p] += vr * zr + vi * zi
                num_im[p] += vr * zi - vi * zr
        for p in range(P):
            den[p] = _clip(den[p], lo_sac, hi_sac, &sat_sac)
            num_re[p] = _clip(num_re[p], lo_mac, hi_mac, &sat_mac)
            num_im[p] = _clip(num_im[p], lo_mac, hi_mac, &sat_mac)

    sat = np.array([sat_es, sat_fs, sat_zm, sat_sac, sat_mac], dtype=np.int64)
    return num_re_a, num_im_a, den_a, sat
