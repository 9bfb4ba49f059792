# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled sequence kernels; drop-in twin of ``_ref``.

The chain loop runs entirely in C with hand-rolled recurrent products. Every
inner loop is an independent contiguous accumulation (the matrix is walked in
transposed order where needed), so the compiler can vectorize under strict
IEEE semantics and results stay bit-reproducible; no BLAS is involved, which
also avoids thread-pool contention with numpy's own library.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

NAME = "compiled"


cdef inline double _sig(double x) noexcept nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def lstm_forward(double[:, ::1] pre, double[:, ::1] recur):
    cdef Py_ssize_t steps = pre.shape[0]
    cdef Py_ssize_t four_q = pre.shape[1]
    cdef Py_ssize_t q = four_q // 4
    gates_arr = np.empty((steps, four_q))
    cell_arr = np.empty((steps, q))
    tanh_arr = np.empty((steps, q))
    hidden_arr = np.empty((steps, q))
    zbuf_arr = np.empty(four_q)
    # transposed copy once per call: the per-step product then walks
    # contiguous rows with no floating-point reduction in the inner loop
    recur_t_arr = np.ascontiguousarray(np.asarray(recur).T)
    cdef double[:, ::1] gates = gates_arr
    cdef double[:, ::1] cell = cell_arr
    cdef double[:, ::1] tanh_cell = tanh_arr
    cdef double[:, ::1] hidden = hidden_arr
    cdef double[::1] z = zbuf_arr
    cdef double[:, ::1] recur_t = recur_t_arr
    cdef Py_ssize_t t, i, j
    cdef double c, cp, v
    with nogil:
        for t in range(steps):
            for i in range(four_q):
                z[i] = pre[t, i]
            if t > 0:
                for j in range(q):
                    v = hidden[t - 1, j]
                    for i in range(four_q):
                        z[i] += recur_t[j, i] * v
            for i in range(3 * q):
                z[i] = _sig(z[i])
            for i in range(3 * q, four_q):
                z[i] = tanh(z[i])
            for i in range(four_q):
                gates[t, i] = z[i]
            for j in range(q):
                cp = cell[t - 1, j] if t > 0 else 0.0
                c = z[j] * cp + z[q + j] * z[3 * q + j]
                cell[t, j] = c
                tanh_cell[t, j] = tanh(c)
                hidden[t, j] = z[2 * q + j] * tanh_cell[t, j]
    return gates_arr, cell_arr, tanh_arr, hidden_arr


def lstm_backward(double[:, ::1] recur,
                  double[:, ::1] gates,
                  double[:, ::1] cell,
                  double[:, ::1] tanh_cell,
                  double[:, ::1] hidden,
                  double[:, ::1] dhidden):
    cdef Py_ssize_t steps = dhidden.shape[0]
    cdef Py_ssize_t q = dhidden.shape[1]
    cdef Py_ssize_t four_q = 4 * q
    dpre_arr = np.empty((steps, four_q))
    drecur_arr = np.zeros((four_q, q))
    dh_arr = np.zeros(q)
    dc_arr = np.zeros(q)
    cdef double[:, ::1] dpre = dpre_arr
    cdef double[:, ::1] drecur = drecur_arr
    cdef double[::1] dh_carry = dh_arr
    cdef double[::1] dc_carry = dc_arr
    cdef Py_ssize_t t, i, j
    cdef double dh, dc, do, df, di, dg, f, ig, o, g, cp, tc, v
    with nogil:
        for t in range(steps - 1, -1, -1):
            for j in range(q):
                f = gates[t, j]
                ig = gates[t, q + j]
                o = gates[t, 2 * q + j]
                g = gates[t, 3 * q + j]
                cp = cell[t - 1, j] if t > 0 else 0.0
                tc = tanh_cell[t, j]
                dh = dhidden[t, j] + dh_carry[j]
                do = dh * tc
                dc = dc_carry[j] + dh * o * (1.0 - tc * tc)
                df = dc * cp
                di = dc * g
                dg = dc * ig
                dc_carry[j] = dc * f
                dpre[t, j] = df * f * (1.0 - f)
                dpre[t, q + j] = di * ig * (1.0 - ig)
                dpre[t, 2 * q + j] = do * o * (1.0 - o)
                dpre[t, 3 * q + j] = dg * (1.0 - g * g)
            # both products walk contiguous rows without reductions
            if t > 0:
                for i in range(four_q):
                    v = dpre[t, i]
                    if v != 0.0:
                        for j in range(q):
                            drecur[i, j] += v * hidden[t - 1, j]
            for j in range(q):
                dh_carry[j] = 0.0
            for i in range(four_q):
                v = dpre[t, i]
                if v != 0.0:
                    for j in range(q):
                        dh_carry[j] += recur[i, j] * v
    return dpre_arr, drecur_arr
