# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled execution kernel for packed MAC programs.

Semantics are defined by the pure-Python twin in ``_kernel_py.py``; the two
must stay bit-identical. The hot loop releases the GIL so campaign workers
can overlap.
"""

from libc.stdint cimport int8_t, int32_t, int64_t, uint8_t

BACKEND = "compiled"

cdef int64_t ACC_MAX_C = 2147483647
cdef int64_t ACC_MIN_C = -2147483648


def run_program(const int32_t[::1] unit, const int32_t[::1] dest,
                const int32_t[:, ::1] act_idx, const int32_t[:, ::1] w_idx,
                const int8_t[::1] act_flat, const int8_t[::1] w_flat,
                int32_t[::1] acc,
                const uint8_t[::1] fmode, const int32_t[::1] fvalue,
                const int64_t[::1] fstart, const int64_t[::1] flen,
                Py_ssize_t lanes, int64_t cycle0):
    """See _kernel_py.run_program; identical contract."""
    cdef Py_ssize_t n = unit.shape[0]
    cdef Py_ssize_t i, l, fi, u, d
    cdef int64_t mac, s, cyc, a, b, prod
    cdef int32_t ai
    cdef uint8_t m
    with nogil:
        for i in range(n):
            cyc = cycle0 + i
            u = unit[i]
            mac = 0
            for l in range(lanes):
                ai = act_idx[i, l]
                if ai == -2:
                    continue
                a = 0 if ai == -1 else act_flat[ai]
                b = w_flat[w_idx[i, l]]
                prod = a * b
                fi = u * lanes + l
                m = fmode[fi]
                if m == 1:
                    prod = 0
                elif m == 2:
                    prod = fvalue[fi]
                elif m == 3:
                    if fstart[fi] <= cyc and cyc < fstart[fi] + flen[fi]:
                        prod = fvalue[fi]
                mac = mac + prod
            if mac > ACC_MAX_C:
                mac = ACC_MAX_C
            elif mac < ACC_MIN_C:
                mac = ACC_MIN_C
            d = dest[i]
            s = <int64_t>acc[d] + mac
            if s > ACC_MAX_C:
                s = ACC_MAX_C
            elif s < ACC_MIN_C:
                s = ACC_MIN_C
            acc[d] = <int32_t>s
    return cycle0 + n
