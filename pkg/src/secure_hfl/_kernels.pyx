# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: MLP mini-batch SGD and vector similarity.

Parameter layout (flat, C order): W1 (n_in x n_hidden), b1 (n_hidden),
W2 (n_hidden x n_out), b2 (n_out).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp, sqrt

cnp.import_array()


def sgd_train(double[::1] params, const double[:, ::1] X, const cnp.int64_t[::1] y,
              const cnp.int64_t[::1] order, int n_hidden, int n_out,
              double lr, int batch_size):
    """Run mini-batch SGD in place over ``order`` (concatenated epoch permutations).

    Batches never straddle epoch boundaries; ``n_samples`` divides ``len(order)``.
    """
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t n_in = X.shape[1]
    cdef Py_ssize_t total = order.shape[0]
    cdef Py_ssize_t o_b1 = n_in * n_hidden
    cdef Py_ssize_t o_w2 = o_b1 + n_hidden
    cdef Py_ssize_t o_b2 = o_w2 + n_hidden * n_out
    cdef double[:, ::1] h = np.empty((batch_size, n_hidden))
    cdef double[:, ::1] dz = np.empty((batch_size, n_out))
    cdef double[:, ::1] da = np.empty((batch_size, n_hidden))
    cdef double[::1] grad = np.empty(params.shape[0])
    cdef Py_ssize_t start, stop, epoch_end, bsz, b, i, j, k, s
    cdef double acc, zmax, zsum, inv

    start = 0
    while start < total:
        epoch_end = (start // n + 1) * n
        stop = start + batch_size
        if stop > epoch_end:
            stop = epoch_end
        bsz = stop - start
        inv = 1.0 / bsz
        grad[:] = 0.0
        for b in range(bsz):
            s = order[start + b]
            for j in range(n_hidden):
                acc = params[o_b1 + j]
                for i in range(n_in):
                    acc = acc + X[s, i] * params[i * n_hidden + j]
                h[b, j] = tanh(acc)
            zmax = -1e300
            for k in range(n_out):
                acc = params[o_b2 + k]
                for j in range(n_hidden):
                    acc = acc + h[b, j] * params[o_w2 + j * n_out + k]
                dz[b, k] = acc
                if acc > zmax:
                    zmax = acc
            zsum = 0.0
            for k in range(n_out):
                dz[b, k] = exp(dz[b, k] - zmax)
                zsum = zsum + dz[b, k]
            for k in range(n_out):
                dz[b, k] = dz[b, k] / zsum * inv
            dz[b, y[s]] -= inv
            for j in range(n_hidden):
                acc = 0.0
                for k in range(n_out):
                    acc = acc + dz[b, k] * params[o_w2 + j * n_out + k]
                da[b, j] = acc * (1.0 - h[b, j] * h[b, j])
        for b in range(bsz):
            s = order[start + b]
            for j in range(n_hidden):
                for k in range(n_out):
                    grad[o_w2 + j * n_out + k] += h[b, j] * dz[b, k]
            for k in range(n_out):
                grad[o_b2 + k] += dz[b, k]
            for i in range(n_in):
                for j in range(n_hidden):
                    grad[i * n_hidden + j] += X[s, i] * da[b, j]
            for j in range(n_hidden):
                grad[o_b1 + j] += da[b, j]
        for i in range(params.shape[0]):
            params[i] -= lr * grad[i]
        start = stop


def dot_norms(const double[::1] a, const double[::1] b):
    """Return (a.b, |a|^2, |b|^2) in one pass."""
    cdef Py_ssize_t i
    cdef double ab = 0.0, aa = 0.0, bb = 0.0
    for i in range(a.shape[0]):
        ab += a[i] * b[i]
        aa += a[i] * a[i]
        bb += b[i] * b[i]
    return ab, aa, bb
