# Compiled conv2d kernels: C im2col packing + BLAS dgemm.
# Geometry matches _kernels_py (same-zero padding, odd kernels,
# output size ceil(in / stride) per spatial axis).

cimport cython
cimport numpy as cnp
import numpy as np
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _im2col(const double[:, :, ::1] x, double[:, ::1] cols,
                  int k, int stride) noexcept nogil:
    cdef int c = x.shape[0]
    cdef int h = x.shape[1]
    cdef int w = x.shape[2]
    cdef int p = (k - 1) // 2
    cdef int ho = (h + stride - 1) // stride
    cdef int wo = (w + stride - 1) // stride
    cdef int m, oh, ow, ci, dy, dx, iy, ix, col
    for oh in range(ho):
        for ow in range(wo):
            m = oh * wo + ow
            col = 0
            for ci in range(c):
                for dy in range(k):
                    iy = oh * stride + dy - p
                    for dx in range(k):
                        ix = ow * stride + dx - p
                        if 0 <= iy < h and 0 <= ix < w:
                            cols[m, col] = x[ci, iy, ix]
                        else:
                            cols[m, col] = 0.0
                        col += 1


def conv2d_forward(const double[:, :, ::1] x, const double[:, :, :, ::1] w, int stride):
    cdef int c = x.shape[0]
    cdef int h = x.shape[1]
    cdef int wd = x.shape[2]
    cdef int o = w.shape[0]
    cdef int k = w.shape[2]
    cdef int ho = (h + stride - 1) // stride
    cdef int wo = (wd + stride - 1) // stride
    cdef int m = ho * wo
    cdef int ckk = c * k * k

    cols_arr = np.empty((m, ckk), dtype=np.float64)
    y_arr = np.empty((o, m), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] y = y_arr

    cdef char *trans_t = b'T'
    cdef char *trans_n = b'N'
    cdef double one = 1.0, zero = 0.0
    with nogil:
        _im2col(x, cols, k, stride)
        # Fortran view: Y(m, o) = cols(ckk, m)^T @ w(ckk, o)
        dgemm(trans_t, trans_n, &m, &o, &ckk, &one,
              &cols[0, 0], &ckk, <double *> &w[0, 0, 0, 0], &ckk,
              &zero, &y[0, 0], &m)
    return y_arr.reshape(o, ho, wo)


def conv2d_backward_weight(const double[:, :, ::1] x, const double[:, :, ::1] gy,
                           int stride, int k):
    cdef int c = x.shape[0]
    cdef int o = gy.shape[0]
    cdef int ho = gy.shape[1]
    cdef int wo = gy.shape[2]
    cdef int m = ho * wo
    cdef int ckk = c * k * k

    cols_arr = np.empty((m, ckk), dtype=np.float64)
    gw_arr = np.empty((o, ckk), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] gw = gw_arr

    cdef char *trans_n = b'N'
    cdef double one = 1.0, zero = 0.0
    with nogil:
        _im2col(x, cols, k, stride)
        # Fortran view: GW(ckk, o) = cols(ckk, m) @ gy(m, o)
        dgemm(trans_n, trans_n, &ckk, &o, &m, &one,
              &cols[0, 0], &ckk, <double *> &gy[0, 0, 0], &m,
              &zero, &gw[0, 0], &ckk)
    return gw_arr.reshape(o, c, k, k)


def conv2d_backward_input(const double[:, :, ::1] gy, const double[:, :, :, ::1] w,
                          int stride, int h, int wd):
    cdef int o = w.shape[0]
    cdef int c = w.shape[1]
    cdef int k = w.shape[2]
    cdef int ho = gy.shape[1]
    cdef int wo = gy.shape[2]
    cdef int m = ho * wo
    cdef int ckk = c * k * k
    cdef int p = (k - 1) // 2

    gcols_arr = np.empty((m, ckk), dtype=np.float64)
    gx_arr = np.zeros((c, h, wd), dtype=np.float64)
    cdef double[:, ::1] gcols = gcols_arr
    cdef double[:, :, ::1] gx = gx_arr

    cdef char *trans_n = b'N'
    cdef char *trans_t = b'T'
    cdef double one = 1.0, zero = 0.0
    cdef int mm, oh, ow, ci, dy, dx, iy, ix, col
    with nogil:
        # Fortran view: GCOLS(ckk, m) = w(ckk, o) @ gy(m, o)^T
        dgemm(trans_n, trans_t, &ckk, &m, &o, &one,
              <double *> &w[0, 0, 0, 0], &ckk, <double *> &gy[0, 0, 0], &m,
              &zero, &gcols[0, 0], &ckk)
        for oh in range(ho):
            for ow in range(wo):
                mm = oh * wo + ow
                col = 0
                for ci in range(c):
                    for dy in range(k):
                        iy = oh * stride + dy - p
                        for dx in range(k):
                            ix = ow * stride + dx - p
                            if 0 <= iy < h and 0 <= ix < wd:
                                gx[ci, iy, ix] += gcols[mm, col]
                            col += 1
    return gx_arr
