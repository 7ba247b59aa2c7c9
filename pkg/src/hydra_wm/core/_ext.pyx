# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: strided valid conv3d (forward/backward) and row top-k.

Loop order is fixed so results are bitwise reproducible run to run.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _im2col(double[:, :, :, ::1] x, double[:, ::1] cols,
                  Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
                  Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw,
                  Py_ssize_t To, Py_ssize_t Ho, Py_ssize_t Wo) noexcept nogil:
    # cols row = (c, a, b, e) tap, column = (t, y, x) output cell
    cdef Py_ssize_t C = x.shape[0], c, a, b, e, t, y, xx, r, col
    r = 0
    for c in range(C):
        for a in range(kt):
            for b in range(kh):
                for e in range(kw):
                    col = 0
                    for t in range(To):
                        for y in range(Ho):
                            for xx in range(Wo):
                                cols[r, col] = x[c, t * st + a, y * sh + b, xx * sw + e]
                                col += 1
                    r += 1


cdef void _col2im(double[:, ::1] cols, double[:, :, :, ::1] gx,
                  Py_ssize_t kt, Py_ssize_t kh, Py_ssize_t kw,
                  Py_ssize_t st, Py_ssize_t sh, Py_ssize_t sw,
                  Py_ssize_t To, Py_ssize_t Ho, Py_ssize_t Wo) noexcept nogil:
    cdef Py_ssize_t C = gx.shape[0], c, a, b, e, t, y, xx, r, col
    r = 0
    for c in range(C):
        for a in range(kt):
            for b in range(kh):
                for e in range(kw):
                    col = 0
                    for t in range(To):
                        for y in range(Ho):
                            for xx in range(Wo):
                                gx[c, t * st + a, y * sh + b, xx * sw + e] += cols[r, col]
                                col += 1
                    r += 1


def conv3d_forward(double[:, :, :, ::1] x, double[:, :, :, :, ::1] w, stride):
    cdef Py_ssize_t C = x.shape[0], T = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cdef Py_ssize_t To = (T - kt) // st + 1, Ho = (H - kh) // sh + 1, Wo = (W - kw) // sw + 1
    cols_arr = np.empty((C * kt * kh * kw, To * Ho * Wo), dtype=np.float64)
    _im2col(x, cols_arr, kt, kh, kw, st, sh, sw, To, Ho, Wo)
    wmat = np.asarray(w).reshape(O, -1)
    return np.dot(wmat, cols_arr).reshape(O, To, Ho, Wo)


def conv3d_backward(double[:, :, :, ::1] x, double[:, :, :, :, ::1] w,
                    double[:, :, :, ::1] g, stride):
    cdef Py_ssize_t C = x.shape[0]
    cdef Py_ssize_t O = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4]
    cdef Py_ssize_t To = g.shape[1], Ho = g.shape[2], Wo = g.shape[3]
    cdef Py_ssize_t st = stride[0], sh = stride[1], sw = stride[2]
    cols_arr = np.empty((C * kt * kh * kw, To * Ho * Wo), dtype=np.float64)
    _im2col(x, cols_arr, kt, kh, kw, st, sh, sw, To, Ho, Wo)
    gmat = np.asarray(g).reshape(O, -1)
    wmat = np.asarray(w).reshape(O, -1)
    gw_arr = np.dot(gmat, cols_arr.T).reshape(w.shape[0], w.shape[1], kt, kh, kw)
    dcols = np.ascontiguousarray(np.dot(wmat.T, gmat))
    gx_arr = np.zeros((x.shape[0], x.shape[1], x.shape[2], x.shape[3]), dtype=np.float64)
    _col2im(dcols, gx_arr, kt, kh, kw, st, sh, sw, To, Ho, Wo)
    return gx_arr, gw_arr


def topk_rows(double[:, ::1] scores, Py_ssize_t k):
    cdef Py_ssize_t R = scores.shape[0], N = scores.shape[1]
    if k > N:
        k = N
    out_arr = np.empty((R, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] sel = np.empty(k, dtype=np.int64)
    cdef Py_ssize_t r, j, m, filled, pos
    cdef double s
    cdef cnp.int64_t tmp
    for r in range(R):
        # sel holds the current top set ordered by (score desc, index asc)
        filled = 0
        for j in range(N):
            s = scores[r, j]
            if filled == k:
                # strict comparison: an equal later index never displaces
                if not (s > scores[r, sel[k - 1]]):
                    continue
                pos = k - 1
            else:
                pos = filled
                filled += 1
            while pos > 0 and s > scores[r, sel[pos - 1]]:
                sel[pos] = sel[pos - 1]
                pos -= 1
            sel[pos] = j
        for m in range(k):
            out[r, m] = sel[m]
        # insertion sort the k indices ascending
        for m in range(1, k):
            tmp = out[r, m]
            pos = m
            while pos > 0 and out[r, pos - 1] > tmp:
                out[r, pos] = out[r, pos - 1]
                pos -= 1
            out[r, pos] = tmp
    return out_arr
