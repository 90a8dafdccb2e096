# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled GRU sequence kernel; same contract as gru_numpy.

Row-major arrays are fed to Fortran BLAS through the identity
cm(C) = cm(B).cm(A); leading dimensions are the row strides of the
(possibly sliced) row-major operands.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sig(double v) nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + exp(-v))
    e = exp(v)
    return e / (1.0 + e)


cdef void _mm_nn(int m, int n, int k, double* a, int lda, double* b, int ldb,
                 double beta, double* c, int ldc) noexcept nogil:
    # row-major C(m,n) = A(m,k) . B(k,n) + beta*C ; ld* are row strides
    cdef double one = 1.0
    cdef char tn = b'N'
    dgemm(&tn, &tn, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


cdef void _mm_nt(int m, int n, int k, double* a, int lda, double* b, int ldb,
                 double beta, double* c, int ldc) noexcept nogil:
    # row-major C(m,n) = A(m,k) . B(n,k)^T + beta*C
    cdef double one = 1.0
    cdef char tt = b'T'
    cdef char tn = b'N'
    dgemm(&tt, &tn, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


cdef void _mm_tn(int m, int n, int k, double* a, int lda, double* b, int ldb,
                 double beta, double* c, int ldc) noexcept nogil:
    # row-major C(m,n) = A(k,m)^T . B(k,n) + beta*C
    cdef double one = 1.0
    cdef char tn = b'N'
    cdef char tt = b'T'
    dgemm(&tn, &tt, &n, &m, &k, &one, b, &ldb, a, &lda, &beta, c, &ldc)


def gru_forward(double[:, :, ::1] x, double[:, ::1] mask, double[:, ::1] h0,
                double[:, ::1] wx, double[:, ::1] wh, double[::1] b,
                bint reverse=False):
    cdef int t_len = x.shape[0]
    cdef int batch = x.shape[1]
    cdef int d_in = x.shape[2]
    cdef int h_dim = wh.shape[0]
    cdef int g3 = 3 * h_dim

    xp_arr = np.empty((t_len, batch, g3))
    z_arr = np.empty((t_len, batch, h_dim))
    r_arr = np.empty((t_len, batch, h_dim))
    n_arr = np.empty((t_len, batch, h_dim))
    hout_arr = np.empty((t_len, batch, h_dim))
    h_arr = np.ascontiguousarray(h0).copy()
    a_arr = np.empty((batch, g3))
    rh_arr = np.empty((batch, h_dim))

    cdef double[:, :, ::1] xp = xp_arr
    cdef double[:, :, ::1] z_all = z_arr
    cdef double[:, :, ::1] r_all = r_arr
    cdef double[:, :, ::1] n_all = n_arr
    cdef double[:, :, ::1] hout = hout_arr
    cdef double[:, ::1] h = h_arr
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] rh = rh_arr

    cdef int i, t, j, p, row
    cdef double zv, rv, nv, m

    with nogil:
        _mm_nn(t_len * batch, g3, d_in, &x[0, 0, 0], d_in, &wx[0, 0], g3,
               0.0, &xp[0, 0, 0], g3)
        for i in range(t_len):
            for j in range(batch):
                for p in range(g3):
                    xp[i, j, p] += b[p]

        for i in range(t_len):
            t = t_len - 1 - i if reverse else i
            memcpy(&a[0, 0], &xp[t, 0, 0], batch * g3 * sizeof(double))
            _mm_nn(batch, 2 * h_dim, h_dim, &h[0, 0], h_dim, &wh[0, 0], g3,
                   1.0, &a[0, 0], g3)
            for j in range(batch):
                for p in range(h_dim):
                    z_all[t, j, p] = _sig(a[j, p])
                    rv = _sig(a[j, h_dim + p])
                    r_all[t, j, p] = rv
                    rh[j, p] = rv * h[j, p]
            _mm_nn(batch, h_dim, h_dim, &rh[0, 0], h_dim, &wh[0, 2 * h_dim], g3,
                   1.0, &a[0, 2 * h_dim], g3)
            for j in range(batch):
                m = mask[t, j]
                for p in range(h_dim):
                    nv = tanh(a[j, 2 * h_dim + p])
                    n_all[t, j, p] = nv
                    zv = z_all[t, j, p]
                    h[j, p] += m * zv * (nv - h[j, p])
                    hout[t, j, p] = h[j, p]

    cache = (np.asarray(x), np.asarray(mask), np.asarray(h0), np.asarray(wx),
             np.asarray(wh), z_arr, r_arr, n_arr, hout_arr, reverse)
    return hout_arr, cache


def gru_backward(object dhout_in, cache):
    x_arr, mask_arr, h0_arr, wx_arr, wh_arr, z_arr, r_arr, n_arr, hout_arr, reverse_flag = cache
    dhout_arr = np.ascontiguousarray(dhout_in)

    cdef double[:, :, ::1] dhout = dhout_arr
    cdef double[:, :, ::1] x = x_arr
    cdef double[:, ::1] mask = mask_arr
    cdef double[:, ::1] h0 = h0_arr
    cdef double[:, ::1] wx = wx_arr
    cdef double[:, ::1] wh = wh_arr
    cdef double[:, :, ::1] z_all = z_arr
    cdef double[:, :, ::1] r_all = r_arr
    cdef double[:, :, ::1] n_all = n_arr
    cdef double[:, :, ::1] hout = hout_arr
    cdef bint reverse = reverse_flag

    cdef int t_len = hout.shape[0]
    cdef int batch = hout.shape[1]
    cdef int h_dim = hout.shape[2]
    cdef int d_in = x.shape[2]
    cdef int g3 = 3 * h_dim

    dxp_arr = np.zeros((t_len, batch, g3))
    dwh_arr = np.zeros((h_dim, g3))
    dh_arr = np.zeros((batch, h_dim))
    dx_arr = np.empty((t_len, batch, d_in))
    dwx_arr = np.empty((d_in, g3))
    db_arr = np.zeros(g3)
    drh_arr = np.empty((batch, h_dim))
    rh_arr = np.empty((batch, h_dim))

    cdef double[:, :, ::1] dxp = dxp_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[:, ::1] dh = dh_arr
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, ::1] dwx = dwx_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] drh = drh_arr
    cdef double[:, ::1] rh = rh_arr

    cdef double* hprev
    cdef int i, t, tp, j, p
    cdef double m, dht, dhnew, zv, rv, nv, hp, dzv, dnv, danv, drv

    with nogil:
        for i in range(t_len - 1, -1, -1):
            t = t_len - 1 - i if reverse else i
            if i > 0:
                tp = t_len - i if reverse else i - 1
                hprev = &hout[tp, 0, 0]
            else:
                hprev = &h0[0, 0]
            for j in range(batch):
                m = mask[t, j]
                for p in range(h_dim):
                    zv = z_all[t, j, p]
                    nv = n_all[t, j, p]
                    hp = hprev[j * h_dim + p]
                    dht = dhout[t, j, p] + dh[j, p]
                    dhnew = dht * m
                    dh[j, p] = dht * (1.0 - m) + dhnew * (1.0 - zv)
                    dzv = dhnew * (nv - hp)
                    dnv = dhnew * zv
                    danv = dnv * (1.0 - nv * nv)
                    dxp[t, j, 2 * h_dim + p] = danv
                    dxp[t, j, p] = dzv * zv * (1.0 - zv)
                    rh[j, p] = r_all[t, j, p] * hp
            # drh = dan . whn^T ; dwh_n += (r*h_prev)^T . dan
            _mm_nt(batch, h_dim, h_dim, &dxp[t, 0, 2 * h_dim], g3,
                   &wh[0, 2 * h_dim], g3, 0.0, &drh[0, 0], h_dim)
            _mm_tn(h_dim, h_dim, batch, &rh[0, 0], h_dim,
                   &dxp[t, 0, 2 * h_dim], g3, 1.0, &dwh[0, 2 * h_dim], g3)
            for j in range(batch):
                for p in range(h_dim):
                    rv = r_all[t, j, p]
                    hp = hprev[j * h_dim + p]
                    drv = drh[j, p] * hp
                    dh[j, p] += drh[j, p] * rv
                    dxp[t, j, h_dim + p] = drv * rv * (1.0 - rv)
            # dh += [daz | dar] . wh[:, :2H]^T ; dwh[:, :2H] += h_prev^T . [daz | dar]
            _mm_nt(batch, h_dim, 2 * h_dim, &dxp[t, 0, 0], g3,
                   &wh[0, 0], g3, 1.0, &dh[0, 0], h_dim)
            _mm_tn(h_dim, 2 * h_dim, batch, hprev, h_dim,
                   &dxp[t, 0, 0], g3, 1.0, &dwh[0, 0], g3)

        # dx = dxp . wx^T ; dwx = x^T . dxp ; db = column sums of dxp
        _mm_nt(t_len * batch, d_in, g3, &dxp[0, 0, 0], g3, &wx[0, 0], g3,
               0.0, &dx[0, 0, 0], d_in)
        _mm_tn(d_in, g3, t_len * batch, &x[0, 0, 0], d_in, &dxp[0, 0, 0], g3,
               0.0, &dwx[0, 0], g3)
        for i in range(t_len):
            for j in range(batch):
                for p in range(g3):
                    db[p] += dxp[i, j, p]

    return dx_arr, dwx_arr, dwh_arr, db_arr
