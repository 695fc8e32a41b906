"""Pure-Python Gillespie loop for the aggregate occupancy chain.

Mirrors ``_kernel.pyx`` operation for operation so both produce identical
trajectories from the same uniform stream.
"""

from __future__ import annotations

import math


def run_chunk(s, n, d, lam, b, max_events, t_limit, stream, acc):
    """Advance the padded state ``s`` (``s[0] = n``, ``s[b+1] = 0``) in place.

    Stops after ``max_events`` transitions or when simulated time reaches
    ``t_limit``. A pending transition that would cross ``t_limit`` is
    discarded, which is exact for a Markov chain. Returns
    ``(events, elapsed, absorbed)``.
    """
    dd = float(d)
    nf = float(n)
    sl = [int(v) for v in s]
    q = [(sl[i] / nf) ** dd for i in range(b + 2)]
    q[0] = 1.0
    q[b + 1] = 0.0

    lo = acc.lo.tolist()
    hi = acc.hi.tolist()
    tail_start = acc.tail_start
    tail_cap = acc.tail_cap
    int_s = acc.int_s.tolist()
    band = acc.band.tolist()
    int_qb = 0.0
    joint = 0.0
    hist = acc.hist
    use_hist = hist.shape[0] > 0
    hist_rows = [row.tolist() for row in hist] if use_hist else []

    ok = [True] * (b + 2)
    nviol = 0
    for i in range(1, b + 1):
        ok[i] = lo[i] <= sl[i] <= hi[i]
        if not ok[i]:
            nviol += 1
    tail = 0
    for i in range(tail_start, b + 1):
        tail += sl[i]
    ok_tail = tail <= tail_cap
    if not ok_tail:
        nviol += 1

    buf = stream.ulist
    pos = stream.pos
    nbuf = stream.buf.shape[0]

    events = 0
    elapsed = 0.0
    absorbed = False
    while events < max_events:
        total_arr = lam * (1.0 - q[b])
        total = total_arr + sl[1]
        if total <= 0.0:
            absorbed = True
            if math.isfinite(t_limit):
                dt = t_limit - elapsed
            else:
                break
        else:
            if pos >= nbuf:
                stream.refill()
                buf = stream.ulist
                pos = 0
            u1 = buf[pos]
            pos += 1
            if pos >= nbuf:
                stream.refill()
                buf = stream.ulist
                pos = 0
            u2 = buf[pos]
            pos += 1
            dt = -math.log(1.0 - u1) / total
        stop = False
        if elapsed + dt >= t_limit:
            dt = t_limit - elapsed
            stop = True
        # accumulate the holding interval
        for i in range(1, b + 1):
            int_s[i] += sl[i] * dt
            if ok[i]:
                band[i] += dt
        if ok_tail:
            band[b + 1] += dt
        if nviol == 0:
            joint += dt
        int_qb += q[b] * dt
        if use_hist:
            for i in range(1, b + 1):
                hist_rows[i][sl[i]] += dt
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
            while i < b and sl[1] - sl[i + 1] <= y:
                i += 1
            while sl[i] == sl[i + 1]:
                i -= 1
            delta = -1
        sl[i] += delta
        q[i] = (sl[i] / nf) ** dd
        was = ok[i]
        ok[i] = lo[i] <= sl[i] <= hi[i]
        if was != ok[i]:
            nviol += -1 if ok[i] else 1
        if i >= tail_start:
            tail += delta
            was = ok_tail
            ok_tail = tail <= tail_cap
            if was != ok_tail:
                nviol += -1 if ok_tail else 1
        events += 1

    stream.pos = pos
    for i in range(b + 2):
        s[i] = sl[i]
        acc.int_s[i] = int_s[i]
        acc.band[i] = band[i]
    acc.int_qb += int_qb
    acc.joint += joint
    if use_hist:
        for i in range(b + 2):
            hist[i, :] = hist_rows[i]
    return events, elapsed, absorbed
