# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled decode-step kernels. Mirrors kernels/fallback.py; keep the two in
# sync (the test suite checks them against each other).

import numpy as np

from libc.math cimport exp, log


cdef double _max(const double[::1] values) nogil:
    cdef Py_ssize_t i
    cdef double m = values[0]
    for i in range(1, values.shape[0]):
        if values[i] > m:
            m = values[i]
    return m


cdef Py_ssize_t _argmax(const double[::1] values) nogil:
    cdef Py_ssize_t i, best = 0
    for i in range(1, values.shape[0]):
        if values[i] > values[best]:
            best = i
    return best


cdef double _exp_shift_sum(const double[::1] logits, double m, double[::1] out) nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(logits.shape[0]):
        out[i] = exp(logits[i] - m)
        s += out[i]
    return s


def softmax(logits):
    cdef double[::1] x = np.ascontiguousarray(logits, dtype=np.float64)
    out_arr = np.empty(x.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double s = _exp_shift_sum(x, _max(x), out)
    cdef Py_ssize_t i
    for i in range(out.shape[0]):
        out[i] /= s
    return out_arr


def log_softmax(logits):
    cdef double[::1] x = np.ascontiguousarray(logits, dtype=np.float64)
    out_arr = np.empty(x.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double m = _max(x)
    cdef double s = log(_exp_shift_sum(x, m, out))
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = x[i] - m - s
    return out_arr


def argmax_low(values):
    cdef double[::1] x = np.ascontiguousarray(values, dtype=np.float64)
    return int(_argmax(x))


def topk_low(values, k):
    # Repeated first-argmax selection: equal values come out in ascending
    # index order, matching the stable sort in the fallback.
    cdef double[::1] work = np.array(values, dtype=np.float64)
    cdef Py_ssize_t n = work.shape[0]
    cdef Py_ssize_t kk = min(int(k), n)
    out_arr = np.empty(kk, dtype=np.int64)
    cdef long long[::1] out = out_arr
    cdef Py_ssize_t i, j, best
    cdef double neg_inf = -np.inf
    for j in range(kk):
        best = _argmax(work)
        out[j] = best
        work[best] = neg_inf
    return out_arr


def apply_guidance(base, topic_ids, constraint_ids, double alpha, double beta):
    adjusted_arr = np.array(base, dtype=np.float64)
    cdef double[::1] adjusted = adjusted_arr
    cdef const long long[::1] topic = np.ascontiguousarray(topic_ids, dtype=np.int64)
    cdef const long long[::1] constraint = np.ascontiguousarray(constraint_ids, dtype=np.int64)
    cdef Py_ssize_t i
    if alpha != 0.0:
        for i in range(topic.shape[0]):
            adjusted[topic[i]] += alpha
    if beta != 0.0:
        for i in range(constraint.shape[0]):
            adjusted[constraint[i]] -= beta
    return adjusted_arr


def guided_step(base, topic_ids, constraint_ids, double alpha, double beta):
    adjusted_arr = apply_guidance(base, topic_ids, constraint_ids, alpha, beta)
    cdef double[::1] adjusted = adjusted_arr
    cdef Py_ssize_t chosen = _argmax(adjusted)
    probs_arr = np.empty(adjusted.shape[0], dtype=np.float64)
    cdef double[::1] probs = probs_arr
    cdef double s = _exp_shift_sum(adjusted, adjusted[chosen], probs)
    cdef Py_ssize_t i
    for i in range(probs.shape[0]):
        probs[i] /= s
    return probs_arr, int(chosen)
