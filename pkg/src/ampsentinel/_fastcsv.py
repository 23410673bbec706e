"""Compiled scanner for the flow-CSV format.

The scanner only accepts lines it can prove valid. Anything else (headers,
comments, malformed or unusual lines) is marked for the pure-Python line
parser in ``ingest``, which stays the reference for the format.
"""

import numpy as np
from numba import njit

OK = 0
SLOW = 1
COMMENT = 2

# 15 digits keeps every counter far from int64 overflow after scaling.
MAX_DIGITS = 15


@njit(cache=True, boundscheck=False, nogil=True)
def scan(buf, ts, src, dst, proto, sport, dport, pkts, nbytes, status, starts):
    n = buf.shape[0]
    i = 0
    line = 0
    while i < n:
        starts[line] = i
        c = buf[i]
        if c == 35 or c == 10 or c == 13:
            while i < n and buf[i] != 10:
                i += 1
            i += 1
            status[line] = COMMENT if c == 35 else SLOW
            line += 1
            continue
        ok = True
        f = 0
        while True:
            if f == 1 or f == 2:
                v = 0
                for o in range(4):
                    d = 0
                    x = 0
                    lead = 0
                    while i < n:
                        c = buf[i]
                        if c < 48 or c > 57:
                            break
                        if d == 0:
                            lead = c
                        x = x * 10 + (c - 48)
                        i += 1
                        d += 1
                    if d == 0 or d > 3 or x > 255 or (d > 1 and lead == 48):
                        ok = False
                    v = v * 256 + x
                    if o < 3:
                        if i < n and buf[i] == 46:
                            i += 1
                        else:
                            ok = False
                            break
                if f == 1:
                    src[line] = v
                else:
                    dst[line] = v
            else:
                d = 0
                x = 0
                while i < n:
                    c = buf[i]
                    if c < 48 or c > 57:
                        break
                    x = x * 10 + (c - 48)
                    i += 1
                    d += 1
                if d == 0 or d > MAX_DIGITS:
                    ok = False
                if f == 0:
                    ts[line] = x
                elif f == 3:
                    proto[line] = x
                elif f == 4:
                    sport[line] = x
                elif f == 5:
                    dport[line] = x
                elif f == 6:
                    pkts[line] = x
                else:
                    nbytes[line] = x
            f += 1
            if not ok or i >= n:
                break
            c = buf[i]
            if c == 44 and f < 8:
                i += 1
                continue
            if c == 13 and i + 1 < n and buf[i + 1] == 10:
                i += 1
                c = 10
            if c != 10:
                ok = False
            break
        if f != 8:
            ok = False
        if ok:
            if proto[line] > 255 or sport[line] > 65535 or dport[line] > 65535:
                ok = False
            elif pkts[line] == 0:
                ok = nbytes[line] == 0
            elif nbytes[line] < 20 * pkts[line]:
                ok = False
        if not ok:
            while i < n and buf[i] != 10:
                i += 1
        i += 1
        status[line] = OK if ok else SLOW
        line += 1
    return line


def scan_buffer(data: bytes):
    """Run the scanner over ``data``; returns (columns, status, starts, nlines)."""
    buf = np.frombuffer(data, dtype=np.uint8)
    cap = data.count(b"\n") + 1
    cols = [np.empty(cap, dtype=np.int64) for _ in range(8)]
    status = np.empty(cap, dtype=np.int8)
    starts = np.empty(cap, dtype=np.int64)
    nlines = scan(buf, *cols, status, starts)
    return cols, status[:nlines], starts[:nlines], nlines


def warm_up() -> None:
    scan_buffer(b"0,1.2.3.4,5.6.7.8,17,123,1,1,20\n")
