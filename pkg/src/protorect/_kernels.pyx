# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels in ``_fallback``.

Inputs are assumed validated by the Python callers.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, log

cnp.import_array()

BACKEND = "cython"


cdef inline double _clamp(double x) noexcept nogil:
    if x > 1.0:
        return 1.0
    if x < -1.0:
        return -1.0
    return x


cdef inline double _dot(const double* a, const double* b, Py_ssize_t d) noexcept nogil:
    # four partial sums so the loop pipelines without -ffast-math
    cdef Py_ssize_t j = 0
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    while j + 4 <= d:
        s0 += a[j] * b[j]
        s1 += a[j + 1] * b[j + 1]
        s2 += a[j + 2] * b[j + 2]
        s3 += a[j + 3] * b[j + 3]
        j += 4
    while j < d:
        s0 += a[j] * b[j]
        j += 1
    return (s0 + s1) + (s2 + s3)


def cosine_matrix(queries, protos):
    cdef const double[:, ::1] q = np.ascontiguousarray(queries, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(protos, dtype=np.float64)
    cdef Py_ssize_t m = q.shape[0], n = p.shape[0], d = q.shape[1], i, c
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] pn = np.empty(n, dtype=np.float64)
    cdef double qn
    with nogil:
        for c in range(n):
            pn[c] = sqrt(_dot(&p[c, 0], &p[c, 0], d))
        for i in range(m):
            qn = sqrt(_dot(&q[i, 0], &q[i, 0], d))
            for c in range(n):
                o[i, c] = _clamp(_dot(&q[i, 0], &p[c, 0], d) / qn / pn[c])
    return out


def softmax_rows(logits):
    cdef const double[:, :] z = np.ascontiguousarray(logits, dtype=np.float64)
    cdef Py_ssize_t m = z.shape[0], n = z.shape[1], i, c
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, :] o = out
    cdef double mx, s
    with nogil:
        for i in range(m):
            mx = z[i, 0]
            for c in range(1, n):
                if z[i, c] > mx:
                    mx = z[i, c]
            s = 0.0
            for c in range(n):
                o[i, c] = exp(z[i, c] - mx)
                s += o[i, c]
            for c in range(n):
                o[i, c] /= s
    return out


def select_topz(cos, probs, long z):
    cdef const double[:, :] cs = np.ascontiguousarray(cos, dtype=np.float64)
    cdef const double[:, :] pr = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t m = cs.shape[0], n = cs.shape[1], i, c, k, pos, cnt
    cdef long zz = z if z > 0 else 0
    picked = np.full((n, zz), -1, dtype=np.int64)
    if zz == 0 or m == 0:
        return picked
    cdef cnp.int64_t[:, :] pk = picked
    cdef cnp.int64_t[:] label = np.empty(m, dtype=np.int64)
    cdef double[:] conf = np.empty(m, dtype=np.float64)
    cdef cnp.int64_t[:] counts = np.zeros(n, dtype=np.int64)
    cdef double best, cf
    cdef Py_ssize_t arg
    with nogil:
        for i in range(m):
            arg = 0
            best = cs[i, 0]
            for c in range(1, n):
                if cs[i, c] > best:
                    best = cs[i, c]
                    arg = c
            label[i] = arg
            conf[i] = pr[i, arg]
        # insertion into a per-class sorted list of length <= z; queries are
        # visited in ascending index, so equal confidences keep index order
        for i in range(m):
            c = label[i]
            cf = conf[i]
            cnt = counts[c]
            pos = cnt
            while pos > 0 and conf[pk[c, pos - 1]] < cf:
                pos -= 1
            if pos >= zz:
                continue
            k = cnt if cnt < zz else zz - 1
            while k > pos:
                pk[c, k] = pk[c, k - 1]
                k -= 1
            pk[c, pos] = i
            if cnt < zz:
                counts[c] = cnt + 1
    return picked


def rectify_prototypes(support, query, picked, basic, double eps):
    cdef const double[:, :, ::1] s = np.ascontiguousarray(support, dtype=np.float64)
    cdef const double[:, ::1] q = np.ascontiguousarray(query, dtype=np.float64)
    cdef const cnp.int64_t[:, ::1] pk = np.ascontiguousarray(picked, dtype=np.int64)
    cdef const double[:, ::1] b = np.ascontiguousarray(basic, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0], kk = s.shape[1], d = s.shape[2], zz = pk.shape[1]
    cdef Py_ssize_t c, i, j, r, nrows
    out = np.zeros((n, d), dtype=np.float64)
    entropy = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] ent = entropy
    cdef double[::1] logit = np.empty(kk + zz, dtype=np.float64)
    cdef double bn, rn, mx, tot, w, h
    cdef const double* row
    with nogil:
        for c in range(n):
            bn = sqrt(_dot(&b[c, 0], &b[c, 0], d))
            nrows = 0
            for i in range(kk):
                row = &s[c, i, 0]
                rn = sqrt(_dot(row, row, d))
                logit[nrows] = eps * _clamp(_dot(row, &b[c, 0], d) / rn / bn)
                nrows += 1
            for i in range(zz):
                r = pk[c, i]
                if r < 0:
                    break
                row = &q[r, 0]
                rn = sqrt(_dot(row, row, d))
                logit[nrows] = eps * _clamp(_dot(row, &b[c, 0], d) / rn / bn)
                nrows += 1
            mx = logit[0]
            for i in range(1, nrows):
                if logit[i] > mx:
                    mx = logit[i]
            tot = 0.0
            for i in range(nrows):
                logit[i] = exp(logit[i] - mx)
                tot += logit[i]
            h = 0.0
            for i in range(nrows):
                w = logit[i] / tot
                if w > 0.0:
                    h -= w * log(w)
                if i < kk:
                    row = &s[c, i, 0]
                else:
                    row = &q[pk[c, i - kk], 0]
                for j in range(d):
                    o[c, j] += w * row[j]
            ent[c] = h
    return out, entropy


def mc_trial_cosines(rows, idx):
    """Prototype gathering in C; the trials x rows cosine product goes through BLAS."""
    x_arr = np.ascontiguousarray(rows, dtype=np.float64)
    cdef const double[:, ::1] x = x_arr
    cdef const cnp.int64_t[:, ::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t d = x.shape[1], trials = ix.shape[0], t = ix.shape[1]
    cdef Py_ssize_t a, i, j
    protos = np.zeros((trials, d), dtype=np.float64)
    cdef double[:, ::1] p = protos
    cdef const double* row
    with nogil:
        for a in range(trials):
            for i in range(t):
                row = &x[ix[a, i], 0]
                for j in range(d):
                    p[a, j] += row[j]
            for j in range(d):
                p[a, j] /= t
    xn = np.sqrt(np.einsum("ij,ij->i", x_arr, x_arr))
    pn = np.sqrt(np.einsum("ij,ij->i", protos, protos))
    cos = (protos @ x_arr.T) / pn[:, None] / xn[None, :]
    return np.clip(cos, -1.0, 1.0).mean(axis=1)
