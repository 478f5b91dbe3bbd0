# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled fused attention kernel.

Same contract as the numpy fallback in _attn_np: stacked 3-d operands,
row softmax over keys, probabilities saved for the backward pass. The
loops are fused per (stack, query-row) so no logits-sized temporaries
are allocated; accumulation runs in the operand dtype, matching what a
BLAS-backed path would do.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

cdef extern from "math.h":
    double c_exp "exp"(double x) nogil
    float c_expf "expf"(float x) nogil

BACKEND = "cython"
NEEDS_CONTIGUOUS = True

ctypedef fused real:
    float
    double


cdef void _rows_forward(real[:, :, ::1] q, real[:, :, ::1] k, real[:, :, ::1] v,
                        real[:, :, ::1] out, real[:, :, ::1] probs,
                        const unsigned char[:, ::1] mask, bint use_mask,
                        real scale) noexcept nogil:
    cdef Py_ssize_t h = q.shape[0], n = q.shape[1], c = q.shape[2]
    cdef Py_ssize_t m = k.shape[1], p = v.shape[2]
    cdef Py_ssize_t b, i, j, t
    cdef real acc, mx, ssum, w
    for b in range(h):
        for i in range(n):
            mx = <real>-1e30
            for j in range(m):
                if use_mask and mask[b, j] == 0:
                    probs[b, i, j] = <real>0.0
                    continue
                acc = <real>0.0
                for t in range(c):
                    acc += q[b, i, t] * k[b, j, t]
                acc *= scale
                probs[b, i, j] = acc
                if acc > mx:
                    mx = acc
            ssum = <real>0.0
            for j in range(m):
                if use_mask and mask[b, j] == 0:
                    continue
                if real is float:
                    w = c_expf(probs[b, i, j] - mx)
                else:
                    w = c_exp(probs[b, i, j] - mx)
                probs[b, i, j] = w
                ssum += w
            for j in range(m):
                if not (use_mask and mask[b, j] == 0):
                    probs[b, i, j] /= ssum
            for t in range(p):
                out[b, i, t] = <real>0.0
            for j in range(m):
                w = probs[b, i, j]
                if w != <real>0.0:
                    for t in range(p):
                        out[b, i, t] += w * v[b, j, t]


def attn_forward(q, k, v, double scale, mask=None):
    out = np.empty(q.shape[:2] + (v.shape[2],), dtype=q.dtype)
    probs = np.empty(q.shape[:2] + (k.shape[1],), dtype=q.dtype)
    cdef bint use_mask = mask is not None
    cdef const unsigned char[:, ::1] mview
    if use_mask:
        mview = mask
    else:
        mview = np.empty((1, 1), dtype=np.uint8)
    if q.dtype == np.float32:
        _rows_forward[float](q, k, v, out, probs, mview, use_mask, <float>scale)
    else:
        _rows_forward[double](q, k, v, out, probs, mview, use_mask, scale)
    return out, probs


cdef void _rows_backward(real[:, :, ::1] gout, real[:, :, ::1] q, real[:, :, ::1] k,
                         real[:, :, ::1] v, real[:, :, ::1] probs,
                         real[:, :, ::1] gq, real[:, :, ::1] gk, real[:, :, ::1] gv,
                         real[::1] scratch, real scale) noexcept nogil:
    cdef Py_ssize_t h = q.shape[0], n = q.shape[1], c = q.shape[2]
    cdef Py_ssize_t m = k.shape[1], p = v.shape[2]
    cdef Py_ssize_t b, i, j, t
    cdef real gp, dot, gl, w
    for b in range(h):
        for i in range(n):
            dot = <real>0.0
            for j in range(m):
                gp = <real>0.0
                for t in range(p):
                    gp += gout[b, i, t] * v[b, j, t]
                scratch[j] = gp
                dot += gp * probs[b, i, j]
            for j in range(m):
                w = probs[b, i, j]
                if w == <real>0.0:
                    continue
                gl = w * (scratch[j] - dot) * scale
                for t in range(c):
                    gq[b, i, t] += gl * k[b, j, t]
                    gk[b, j, t] += gl * q[b, i, t]
                for t in range(p):
                    gv[b, j, t] += w * gout[b, i, t]


def attn_backward(gout, q, k, v, probs, double scale):
    gq = np.zeros_like(q)
    gk = np.zeros_like(k)
    gv = np.zeros_like(v)
    scratch = np.empty(k.shape[1], dtype=q.dtype)
    if q.dtype == np.float32:
        _rows_backward[float](gout, q, k, v, probs, gq, gk, gv, scratch, <float>scale)
    else:
        _rows_backward[double](gout, q, k, v, probs, gq, gk, gv, scratch, scale)
    return gq, gk, gv
