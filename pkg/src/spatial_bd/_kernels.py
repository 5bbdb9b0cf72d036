"""Compiled inner loops.

Configurations are held here as a C-contiguous (capacity, d) float64 buffer
plus a live row count ``n``; a multiplicity-k atom occupies k identical rows.
Row order carries no meaning: every selection below depends only on the
multiset of rows, so swap-with-last removal is safe.

Random choices (LR draws, argmin ties) use per-event *priorities*: copy j of
an atom at z gets the pseudo-uniform value ``priority(tie_seed, z, j)`` and
the admissible copy of smallest priority is killed. For a fixed event the
priorities are i.i.d. uniform across copies, so the marginal choice is
uniform; and because the priority of a copy does not depend on the rest of
the configuration, if P << Q the copy chosen in Q is either also P's choice or
lies outside P. One step is therefore a monotone map for the << order.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

LG, LR, LO, GG, GO = 0, 1, 2, 3, 4
POLICY_CODES = {"LG": LG, "LR": LR, "LO": LO, "GG": GG, "GO": GO}

MINUS, PLUS = 0, 1

REGION_BALL, REGION_BOX, REGION_STRIP = 0, 1, 2

TIE_TOL = 1e-12

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_NEG_ZERO = np.uint64(0x8000000000000000)
_U53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_uniform(seed, k):
    """k-th uniform draw of the splitmix64 stream keyed by ``seed``."""
    h = mix64(seed + (np.uint64(k) + np.uint64(1)) * _GAMMA)
    return (h >> _S11) * _U53


@njit(cache=True)
def priority(seed, bits, copy):
    h = mix64(seed ^ _GAMMA)
    for k in range(bits.shape[0]):
        b = bits[k]
        if b == _NEG_ZERO:
            b = np.uint64(0)
        h = mix64(h ^ b)
    h = mix64(h + (np.uint64(copy) + np.uint64(1)) * _GAMMA)
    return (h >> _S11) * _U53


@njit(cache=True)
def metric(periodic, lengths, a, b):
    s = 0.0
    for k in range(a.shape[0]):
        diff = abs(a[k] - b[k])
        if periodic:
            w = lengths[k] - diff
            if w < diff:
                diff = w
        s += diff * diff
    return math.sqrt(s)


@njit(cache=True)
def cell_of(cells, v):
    k = np.searchsorted(cells, v, side="right") - 1
    if k < 0:
        k = 0
    if k > cells.shape[0] - 2:
        k = cells.shape[0] - 2
    return k


@njit(cache=True)
def admissible_d2(periodic, lengths, policy, r2, cells, x, pts, i):
    """Squared distance from x to row i when a minus at x may kill it, else -1."""
    d = x.shape[0]
    s = 0.0
    if policy == LO or policy == GO:
        if periodic:
            for k in range(d):
                f = pts[i, k] - x[k]
                if f < 0.0:
                    f += lengths[k]
                s += f * f
        else:
            for k in range(d):
                f = pts[i, k] - x[k]
                if f < 0.0:
                    return -1.0
                s += f * f
    else:
        for k in range(d):
            f = abs(pts[i, k] - x[k])
            if periodic:
                w = lengths[k] - f
                if w < f:
                    f = w
            s += f * f
    if policy != GG and policy != GO and not s < r2:
        return -1.0
    if cells.shape[0] > 0 and cell_of(cells, x[0]) != cell_of(cells, pts[i, 0]):
        return -1.0
    return s


@njit(cache=True)
def _dist_ok(periodic, lengths, policy, radius, cells, x, pts, i):
    """Exact distance of an admissible row (strict radius test in distance units), else -1."""
    s = admissible_d2(periodic, lengths, policy, radius * radius * (1.0 + 1e-9), cells, x, pts, i)
    if s < 0.0:
        return -1.0
    d = math.sqrt(s)
    if policy != GG and policy != GO and not d < radius:
        return -1.0
    return d


@njit(cache=True)
def admissible_distance(periodic, lengths, policy, radius, cells, x, z):
    """Distance from x to z when a minus at x may kill z, else -1."""
    return _dist_ok(periodic, lengths, policy, radius, cells, x, z.reshape(1, z.shape[0]), 0)


@njit(cache=True)
def rows_equal(a, b):
    for k in range(a.shape[0]):
        if a[k] != b[k]:
            return False
    return True


@njit(cache=True)
def copy_rank(pts, i):
    r = 0
    for k in range(i):
        if rows_equal(pts[k], pts[i]):
            r += 1
    return r


@njit(cache=True)
def _lr_select(pts, n, x, seed, periodic, lengths, radius, cells):
    bits = pts.view(np.uint64)
    r2_lo = radius * radius * (1.0 - 1e-9)
    r2_hi = radius * radius * (1.0 + 1e-9)
    d = x.shape[0]
    best = -1
    best_p = 2.0
    for i in range(n):
        s = 0.0
        for k in range(d):
            f = abs(pts[i, k] - x[k])
            if periodic:
                w = lengths[k] - f
                if w < f:
                    f = w
            s += f * f
        if s >= r2_hi:
            continue
        if (s >= r2_lo or cells.shape[0] > 0) and \
                _dist_ok(periodic, lengths, LR, radius, cells, x, pts, i) < 0.0:
            continue
        p = priority(seed, bits[i], copy_rank(pts, i))
        if p < best_p:
            best_p = p
            best = i
    return best


@njit(cache=True)
def _exact_select(pts, n, x, seed, periodic, lengths, policy, radius, cells):
    """Reference argmin with priority tie-breaking, using exact distances."""
    dmin = np.inf
    for i in range(n):
        d = _dist_ok(periodic, lengths, policy, radius, cells, x, pts, i)
        if d >= 0.0 and d < dmin:
            dmin = d
    if dmin == np.inf:
        return -1
    lim = dmin + TIE_TOL
    bits = pts.view(np.uint64)
    best = -1
    best_p = 2.0
    for i in range(n):
        d = _dist_ok(periodic, lengths, policy, radius, cells, x, pts, i)
        if d < 0.0 or d > lim:
            continue
        p = priority(seed, bits[i], copy_rank(pts, i))
        if p < best_p:
            best_p = p
            best = i
    return best


@njit(cache=True)
def select_row(pts, n, x, seed, periodic, lengths, policy, radius, cells):
    """Row index of the atom killed by a minus at x, or -1 (cemetery)."""
    if policy == LR:
        return _lr_select(pts, n, x, seed, periodic, lengths, radius, cells)

    # The scan is written out inline: helper calls taking arrays cost a
    # reference-count round trip per row, which dominates at large mass.
    one_sided = policy == LO or policy == GO
    local = policy == LG or policy == LO
    # squared distances order rows like distances; the slightly enlarged
    # radius leaves boundary cases to the exact test below
    r2 = radius * radius * (1.0 + 1e-9)
    ncell = cells.shape[0]
    cx = cell_of(cells, x[0]) if ncell > 0 else 0
    d = x.shape[0]
    smin = np.inf
    s2 = np.inf
    arg = -1
    for i in range(n):
        s = 0.0
        ok = True
        for k in range(d):
            f = pts[i, k] - x[k]
            if one_sided:
                if f < 0.0:
                    if periodic:
                        f += lengths[k]
                    else:
                        ok = False
                        break
            else:
                f = abs(f)
                if periodic:
                    w = lengths[k] - f
                    if w < f:
                        f = w
            s += f * f
        if not ok or (local and not s < r2):
            continue
        if ncell > 0:
            c = 0
            while c < ncell - 2 and pts[i, 0] >= cells[c + 1]:
                c += 1
            if c != cx:
                continue
        if s < smin:
            s2 = smin
            smin = s
            arg = i
        elif s < s2:
            s2 = s
    if arg < 0:
        return -1
    dmin = math.sqrt(smin)
    if local and not dmin < radius:
        return _exact_select(pts, n, x, seed, periodic, lengths, policy, radius, cells)
    if math.sqrt(s2) <= dmin + TIE_TOL:
        return _exact_select(pts, n, x, seed, periodic, lengths, policy, radius, cells)
    return arg


@njit(cache=True)
def in_region(kind, par, periodic, lengths, z):
    d = z.shape[0]
    if kind == REGION_BALL:
        return metric(periodic, lengths, par[:d], z) < par[d]
    if kind == REGION_BOX:
        for k in range(d):
            if z[k] < par[k] or z[k] > par[d + k]:
                return False
        return True
    for k in range(d):
        if z[k] < par[0]:
            return True
    return False


@njit(cache=True)
def region_counts(pts, n, reg_kind, reg_par, periodic, lengths, counts):
    for r in range(reg_kind.shape[0]):
        c = 0
        for i in range(n):
            if in_region(reg_kind[r], reg_par[r], periodic, lengths, pts[i]):
                c += 1
        counts[r] = c


@njit(cache=True)
def apply_event(pts, n, kind, x, seed, periodic, lengths, policy, radius, cells,
                reg_kind, reg_par, counts):
    """One step of the forward recursion, in place. Returns the new row count."""
    if kind == PLUS:
        for k in range(x.shape[0]):
            pts[n, k] = x[k]
        for r in range(reg_kind.shape[0]):
            if in_region(reg_kind[r], reg_par[r], periodic, lengths, x):
                counts[r] += 1
        return n + 1
    i = select_row(pts, n, x, seed, periodic, lengths, policy, radius, cells)
    if i < 0:
        return n
    for r in range(reg_kind.shape[0]):
        if in_region(reg_kind[r], reg_par[r], periodic, lengths, pts[i]):
            counts[r] -= 1
    n -= 1
    for k in range(pts.shape[1]):
        pts[i, k] = pts[n, k]
    return n


@njit(cache=True)
def run(pts, n, kinds, locs, ties, periodic, lengths, policy, radius, cells,
        reg_kind, reg_par, counts, out_mass, out_counts):
    """Apply a block of events. Returns (n, position of the last step after
    which the configuration was empty, or -1)."""
    record = out_mass.shape[0] > 0
    last_empty = -1
    for k in range(kinds.shape[0]):
        n = apply_event(pts, n, kinds[k], locs[k], ties[k], periodic, lengths,
                        policy, radius, cells, reg_kind, reg_par, counts)
        if n == 0:
            last_empty = k
        if record:
            out_mass[k] = n
            for r in range(counts.shape[0]):
                out_counts[k, r] = counts[r]
    return n, last_empty


# ------------------------------------------------------------- multisets


@njit(cache=True)
def lex_less(a, b):
    for k in range(a.shape[0]):
        if a[k] < b[k]:
            return True
        if a[k] > b[k]:
            return False
    return False


@njit(cache=True)
def lex_order(pts, n):
    idx = np.argsort(pts[:n, 0])
    if pts.shape[1] == 1:
        return idx
    # argsort on the first column is not stable; finish runs of equal keys
    i = 0
    while i < n:
        j = i + 1
        while j < n and pts[idx[j], 0] == pts[idx[i], 0]:
            j += 1
        for a in range(i + 1, j):
            cur = idx[a]
            b = a - 1
            while b >= i and lex_less(pts[cur], pts[idx[b]]):
                idx[b + 1] = idx[b]
                b -= 1
            idx[b + 1] = cur
        i = j
    return idx


@njit(cache=True)
def submultiset(P, nP, Q, nQ):
    """True iff the rows of P form a sub-multiset of the rows of Q."""
    if nP > nQ:
        return False
    if nP == 0:
        return True
    ip = lex_order(P, nP)
    iq = lex_order(Q, nQ)
    j = 0
    for a in range(nP):
        row = P[ip[a]]
        while j < nQ and lex_less(Q[iq[j]], row):
            j += 1
        if j >= nQ or not rows_equal(Q[iq[j]], row):
            return False
        j += 1
    return True


@njit(cache=True)
def multiset_equal(A, nA, B, nB):
    return nA == nB and submultiset(A, nA, B, nB)


@njit(cache=True)
def run_pair(P, nP, Q, nQ, kinds, locs, ties, periodic, lengths, policy, radius,
             cells_p, cells_q, check_every):
    """Evolve P and Q on the same events; count steps where P << Q fails."""
    no_kind = np.zeros(0, np.int64)
    no_par = np.zeros((0, 1), np.float64)
    no_counts = np.zeros(0, np.int64)
    violations = 0
    first = -1
    for k in range(kinds.shape[0]):
        nP = apply_event(P, nP, kinds[k], locs[k], ties[k], periodic, lengths, policy,
                         radius, cells_p, no_kind, no_par, no_counts)
        nQ = apply_event(Q, nQ, kinds[k], locs[k], ties[k], periodic, lengths, policy,
                         radius, cells_q, no_kind, no_par, no_counts)
        if check_every and not submultiset(P, nP, Q, nQ):
            violations += 1
            if first < 0:
                first = k
    return nP, nQ, violations, first


@njit(cache=True)
def run_until_equal(A, nA, B, nB, kinds, locs, ties, periodic, lengths, policy, radius,
                    cells):
    """Evolve A and B on the same events until they coincide as multisets.

    Returns (nA, nB, position of the coalescing step or -1)."""
    no_kind = np.zeros(0, np.int64)
    no_par = np.zeros((0, 1), np.float64)
    no_counts = np.zeros(0, np.int64)
    for k in range(kinds.shape[0]):
        nA = apply_event(A, nA, kinds[k], locs[k], ties[k], periodic, lengths, policy,
                         radius, cells, no_kind, no_par, no_counts)
        nB = apply_event(B, nB, kinds[k], locs[k], ties[k], periodic, lengths, policy,
                         radius, cells, no_kind, no_par, no_counts)
        if nA == nB and multiset_equal(A, nA, B, nB):
            return nA, nB, k
    return nA, nB, -1


@njit(cache=True)
def backward_monotone_violations(kinds, locs, ties, periodic, lengths, policy, radius, cells):
    """Events are those of indices -m .. -1 (m = len(kinds)). For every
    n < m, count the depths where the iterate from -n is not a sub-multiset
    of the iterate from -(n + 1)."""
    m = kinds.shape[0]
    d = locs.shape[1]
    P = np.empty((m + 1, d))
    Q = np.empty((m + 1, d))
    no_kind = np.zeros(0, np.int64)
    no_par = np.zeros((0, 1), np.float64)
    no_counts = np.zeros(0, np.int64)
    bad = 0
    for n in range(m):
        start = m - n - 1
        nP = 0
        nQ = apply_event(Q, 0, kinds[start], locs[start], ties[start], periodic, lengths,
                         policy, radius, cells, no_kind, no_par, no_counts)
        for k in range(start + 1, m):
            nP = apply_event(P, nP, kinds[k], locs[k], ties[k], periodic, lengths, policy,
                             radius, cells, no_kind, no_par, no_counts)
            nQ = apply_event(Q, nQ, kinds[k], locs[k], ties[k], periodic, lengths, policy,
                             radius, cells, no_kind, no_par, no_counts)
        if not submultiset(P, nP, Q, nQ):
            bad += 1
    return bad
