# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled step loop and single-sample network forward pass.

Same contract as ``_kernels_py``; keep the two in lockstep.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.stdlib cimport llabs

cnp.import_array()

ctypedef long long i64


cdef void _forward(const double[::1] theta, const i64[::1] dims, double* x,
                   double* buf_a, double* buf_b, double* out) noexcept nogil:
    cdef Py_ssize_t n_layers = dims.shape[0] - 1
    cdef Py_ssize_t k, i, j, n_in, n_out, off = 0
    cdef double acc
    cdef double* src = x
    cdef double* dst
    for k in range(n_layers):
        n_in = dims[k]
        n_out = dims[k + 1]
        if k == n_layers - 1:
            dst = out
        elif k % 2 == 0:
            dst = buf_a
        else:
            dst = buf_b
        for j in range(n_out):
            acc = 0.0
            for i in range(n_in):
                acc = acc + theta[off + j * n_in + i] * src[i]
            acc = acc + theta[off + n_in * n_out + j]
            if k < n_layers - 1 and acc < 0.0:
                acc = 0.0
            dst[j] = acc
        off += n_in * n_out + n_out
        src = dst


def forward_one(const double[::1] theta, const i64[::1] dims, const double[::1] x, double[::1] out):
    cdef Py_ssize_t width = 0, k
    for k in range(dims.shape[0]):
        if dims[k] > width:
            width = dims[k]
    cdef double* xa = <double*> malloc(width * sizeof(double))
    cdef double* ba = <double*> malloc(width * sizeof(double))
    cdef double* bb = <double*> malloc(width * sizeof(double))
    try:
        for k in range(x.shape[0]):
            xa[k] = x[k]
        _forward(theta, dims, xa, ba, bb, &out[0])
    finally:
        free(xa); free(ba); free(bb)


def rollout(const i64[::1] ask1, const i64[::1] bid1, const i64[::1] last,
            const i64[::1] mid2, const i64[::1] spread, const double[::1] imb,
            const double[::1] vol, i64[::1] hist, i64[::1] acct, Py_ssize_t n_steps,
            i64 fixed_action, i64 max_inv, const double[::1] theta, const i64[::1] dims,
            const double[::1] mu, const double[::1] sd, const double[::1] eps,
            const double[::1] u, const i64[::1] ra,
            i64 comm2, bint punish, bint inclusive, bint comm_in_reward, bint liquidate,
            Py_ssize_t lag,
            i64[::1] t_out, double[:, ::1] states, i64[::1] actions, i64[::1] ma_out,
            i64[::1] mb_out, i64[::1] dcash_out, i64[::1] dinv_out, i64[::1] rew_out,
            i64[::1] inv_out, i64[::1] cash_out, i64[::1] val_out, i64[::1] wealth_out):
    cdef Py_ssize_t n = ask1.shape[0]
    cdef Py_ssize_t t = acct[0]
    cdef i64 inv = acct[1], cash = acct[2], val = acct[3], wealth = acct[4], fills = acct[5]
    cdef bint use_net = fixed_action < 0
    cdef Py_ssize_t i = 0, j, k, width = 1
    cdef i64 a, ma, mb, nf, dcash, rcash, dval, cost, r, nxt
    cdef double xs[5]
    cdef double q[64]
    cdef double* ba = NULL
    cdef double* bb = NULL
    if use_net:
        if dims[dims.shape[0] - 1] > 64:
            raise ValueError("at most 64 outputs supported")
        for k in range(dims.shape[0]):
            if dims[k] > width:
                width = dims[k]
        ba = <double*> malloc(width * sizeof(double))
        bb = <double*> malloc(width * sizeof(double))
    try:
        with nogil:
            while i < n_steps and t < n - 1:
                states[i, 0] = imb[t]
                states[i, 1] = vol[t]
                states[i, 2] = <double> inv
                states[i, 3] = <double> spread[t]
                states[i, 4] = (hist[t] - hist[t - lag]) / 2.0
                if use_net:
                    if u[i] < eps[i]:
                        a = ra[i]
                    else:
                        for k in range(5):
                            xs[k] = (states[i, k] - mu[k]) / sd[k]
                        _forward(theta, dims, xs, ba, bb, q)
                        a = 0
                        for j in range(1, dims[dims.shape[0] - 1]):
                            if q[j] > q[a]:
                                a = j
                else:
                    a = fixed_action
                if max_inv > 0:
                    if inv >= max_inv:
                        a = a & 2
                    if inv <= -max_inv:
                        a = a & 1
                nxt = last[t + 1]
                if inclusive:
                    ma = 1 if ((a & 2) and nxt >= ask1[t]) else 0
                    mb = 1 if ((a & 1) and nxt <= bid1[t]) else 0
                else:
                    ma = 1 if ((a & 2) and nxt > ask1[t]) else 0
                    mb = 1 if ((a & 1) and nxt < bid1[t]) else 0
                nf = ma + mb
                dcash = spread[t] * nf - comm2 * nf
                rcash = dcash if comm_in_reward else dcash + comm2 * nf
                inv = inv + mb - ma
                dval = inv * (mid2[t + 1] - mid2[t])
                t += 1
                if liquidate and t == n - 1 and inv != 0:
                    cost = llabs(inv) * (spread[t] + comm2)
                    dcash -= cost
                    rcash -= cost
                    inv = 0
                cash += dcash
                val += dval
                wealth += dcash + dval
                fills += nf
                hist[t] = val
                r = rcash + dval
                if punish:
                    r -= 2 * llabs(inv)
                t_out[i] = t - 1
                actions[i] = a
                ma_out[i] = ma
                mb_out[i] = mb
                dcash_out[i] = dcash
                dinv_out[i] = dval
                rew_out[i] = r
                inv_out[i] = inv
                cash_out[i] = cash
                val_out[i] = val
                wealth_out[i] = wealth
                i += 1
            states[i, 0] = imb[t]
            states[i, 1] = vol[t]
            states[i, 2] = <double> inv
            states[i, 3] = <double> spread[t]
            states[i, 4] = (hist[t] - hist[t - lag]) / 2.0
    finally:
        if ba != NULL:
            free(ba)
        if bb != NULL:
            free(bb)
    acct[0] = t
    acct[1] = inv
    acct[2] = cash
    acct[3] = val
    acct[4] = wealth
    acct[5] = fills
    return i
