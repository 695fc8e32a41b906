# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Gillespie loop for the aggregate occupancy chain.

Same contract and the same floating-point operation order as
``_kernel_py.run_chunk``.
"""

from libc.math cimport log, pow, isfinite

import numpy as np


def run_chunk(long long[::1] s, long long n, long long d, double lam, int b,
              long long max_events, double t_limit, stream, acc):
    cdef double dd = <double>d
    cdef double nf = <double>n
    cdef int i
    cdef double[::1] q = np.empty(b + 2, dtype=np.float64)
    for i in range(b + 2):
        q[i] = pow(<double>s[i] / nf, dd)
    q[0] = 1.0
    q[b + 1] = 0.0

    cdef double[::1] lo = acc.lo
    cdef double[::1] hi = acc.hi
    cdef int tail_start = acc.tail_start
    cdef double tail_cap = acc.tail_cap
    cdef double[::1] int_s = acc.int_s
    cdef double[::1] band = acc.band
    cdef double[:, ::1] hist = acc.hist
    cdef bint use_hist = hist.shape[0] > 0
    cdef double int_qb = 0.0
    cdef double joint = 0.0

    cdef unsigned char[::1] ok = np.ones(b + 2, dtype=np.uint8)
    cdef int nviol = 0
    for i in range(1, b + 1):
        ok[i] = lo[i] <= s[i] and s[i] <= hi[i]
        if not ok[i]:
            nviol += 1
    cdef long long tail = 0
    for i in range(tail_start, b + 1):
        tail += s[i]
    cdef bint ok_tail = tail <= tail_cap
    if not ok_tail:
        nviol += 1

    cdef double[::1] buf = stream.buf
    cdef Py_ssize_t pos = stream.pos
    cdef Py_ssize_t nbuf = buf.shape[0]

    cdef long long events = 0
    cdef double elapsed = 0.0
    cdef bint absorbed = False
    cdef bint stop
    cdef double total_arr, total, dt, x, y, u1 = 0.0, u2 = 0.0
    cdef int delta
    cdef bint was, now

    while events < max_events:
        total_arr = lam * (1.0 - q[b])
        total = total_arr + <double>s[1]
        if total <= 0.0:
            absorbed = True
            if isfinite(t_limit):
                dt = t_limit - elapsed
            else:
                break
        else:
            if pos >= nbuf:
                stream.refill()
                pos = 0
            u1 = buf[pos]
            pos += 1
            if pos >= nbuf:
                stream.refill()
                pos = 0
            u2 = buf[pos]
            pos += 1
            dt = -log(1.0 - u1) / total
        stop = False
        if elapsed + dt >= t_limit:
            dt = t_limit - elapsed
            stop = True
        for i in range(1, b + 1):
            int_s[i] += <double>s[i] * dt
            if ok[i]:
                band[i] += dt
        if ok_tail:
            band[b + 1] += dt
        if nviol == 0:
            joint += dt
        int_qb += q[b] * dt
        if use_hist:
            for i in range(1, b + 1):
                hist[i, s[i]] += dt
        if stop or absorbed:
            elapsed = t_limit
            break
        elapsed += dt

        x = u2 * total
        if x < total_arr:
            i = 1
            while i < b and lam * (1.0 - q[i]) <= x:
                i += 1
            delta = 1
        else:
            y = x - total_arr
            i = 1
            while i < b and <double>(s[1] - s[i + 1]) <= y:
                i += 1
            while s[i] == s[i + 1]:
                i -= 1
            delta = -1
        s[i] += delta
        q[i] = pow(<double>s[i] / nf, dd)
        was = ok[i]
        now = lo[i] <= s[i] and s[i] <= hi[i]
        ok[i] = now
        if was != now:
            nviol += -1 if now else 1
        if i >= tail_start:
            tail += delta
            was = ok_tail
            ok_tail = tail <= tail_cap
            if was != ok_tail:
                nviol += -1 if ok_tail else 1
        events += 1

    stream.pos = pos
    acc.int_qb += int_qb
    acc.joint += joint
    return events, elapsed, absorbed
