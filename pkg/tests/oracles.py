"""Independent reference implementations used to cross-check the library.

These deliberately avoid the library's lookup structures and solver:
longest-prefix match and origin validation run as linear scans over all
entries, and the linear program is solved by exhaustive vertex
enumeration or an exact rational-arithmetic simplex.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from rpkiguard.netprefix import MAX_LENGTH, IpPrefix, contains


def lpm_scan(entries, version, address):
    """Linear-scan longest match over (IpPrefix, value) pairs.

    Returns (prefix, [values]) with values in insertion order, or None.
    """
    best_prefix = None
    values = []
    for prefix, value in entries:
        if prefix.version != version:
            continue
        shift = MAX_LENGTH[version] - prefix.length
        if (address >> shift) != (prefix.value >> shift):
            continue
        if best_prefix is None or prefix.length > best_prefix.length:
            best_prefix, values = prefix, [value]
        elif prefix.length == best_prefix.length:
            values.append(value)
    if best_prefix is None:
        return None
    return best_prefix, values


def validate_scan(records, announced: IpPrefix, origin: int):
    """Brute-force origin validation over a flat list of RoaRecord.

    Returns (status value, asn_mismatch, length_mismatch, exact_match).
    """
    covering = [r for r in records if contains(r.prefix, announced)]
    if not covering:
        return ("notfound", False, False, False)
    matching = [r for r in covering if r.asn == origin]
    admitted = [r for r in matching if announced.length <= r.max_length]
    if admitted:
        exact = any(r.max_length == announced.length for r in admitted)
        return ("valid", False, False, exact)
    if matching:
        return ("invalid", False, True, False)
    length_ok = any(announced.length <= r.max_length for r in covering)
    return ("invalid", True, not length_ok, False)


def vertex_enumeration_maximize(c, A_eq, b_eq, A_ub, b_ub, upper):
    """Maximize over all basic feasible points of a small dense LP.

    Equality rows are always active; every choice of n - n_eq active
    inequalities (capacity rows, upper bounds, nonnegativity) defines a
    candidate vertex. Returns (x, value) at the best feasible vertex.
    """
    c = np.asarray(c, dtype=float)
    A_eq = np.asarray(A_eq, dtype=float)
    b_eq = np.asarray(b_eq, dtype=float)
    n = c.shape[0]

    rows = [np.asarray(r, dtype=float) for r in A_ub]
    hs = list(np.asarray(b_ub, dtype=float))
    for j in range(n):
        unit = np.zeros(n)
        unit[j] = 1.0
        rows.append(unit.copy())
        hs.append(float(upper[j]))
        rows.append(-unit)
        hs.append(0.0)
    G = np.array(rows)
    h = np.array(hs)

    need = n - A_eq.shape[0]
    best_x, best_val = None, -np.inf
    for combo in itertools.combinations(range(len(h)), need):
        M = np.vstack([A_eq, G[list(combo)]])
        rhs = np.concatenate([b_eq, h[list(combo)]])
        try:
            x = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(x)):
            continue
        if np.any(G @ x > h + 1e-9):
            continue
        if np.any(np.abs(A_eq @ x - b_eq) > 1e-9):
            continue
        value = float(c @ x)
        if value > best_val:
            best_x, best_val = x, value
    assert best_x is not None, "no feasible vertex found"
    return best_x, best_val


def _simplex_phase(rows, rhs, basis, objective):
    """Bland's-rule tableau simplex on Fractions; maximizes objective."""
    m = len(rows)
    n_cols = len(objective)
    while True:
        cb = [objective[b] for b in basis]
        entering = -1
        for j in range(n_cols):
            if j in basis:
                continue
            reduced = sum(cb[i] * rows[i][j] for i in range(m)) - objective[j]
            if reduced < 0:
                entering = j
                break
        if entering < 0:
            return
        leaving = -1
        best_ratio = None
        for i in range(m):
            coeff = rows[i][entering]
            if coeff > 0:
                ratio = rhs[i] / coeff
                if (
                    best_ratio is None
                    or ratio < best_ratio
                    or (ratio == best_ratio and basis[i] < basis[leaving])
                ):
                    best_ratio = ratio
                    leaving = i
        if leaving < 0:
            raise RuntimeError("unbounded")
        pivot = rows[leaving][entering]
        rows[leaving] = [v / pivot for v in rows[leaving]]
        rhs[leaving] = rhs[leaving] / pivot
        for i in range(m):
            if i == leaving:
                continue
            factor = rows[i][entering]
            if factor != 0:
                rows[i] = [a - factor * b for a, b in zip(rows[i], rows[leaving])]
                rhs[i] = rhs[i] - factor * rhs[leaving]
        basis[leaving] = entering


def exact_lp_maximize(c, A_eq, b_eq, A_ub, b_ub, upper):
    """Two-phase exact-rational simplex for max c@x, A_eq x = b_eq,
    A_ub x <= b_ub, 0 <= x <= upper. Returns (x floats, value float).
    """
    fr = Fraction
    n = len(c)
    n_ub = len(b_ub)
    n_eq = len(b_eq)
    col_slack = n
    col_bound = n + n_ub
    col_art = n + n_ub + n
    n_cols = col_art + n_eq

    rows: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    basis: list[int] = []
    for i in range(n_ub):
        row = [fr(v) for v in A_ub[i]] + [fr(0)] * (n_cols - n)
        row[col_slack + i] = fr(1)
        rows.append(row)
        rhs.append(fr(b_ub[i]))
        basis.append(col_slack + i)
    for j in range(n):
        row = [fr(0)] * n_cols
        row[j] = fr(1)
        row[col_bound + j] = fr(1)
        rows.append(row)
        rhs.append(fr(upper[j]))
        basis.append(col_bound + j)
    for i in range(n_eq):
        row = [fr(v) for v in A_eq[i]] + [fr(0)] * (n_cols - n)
        row[col_art + i] = fr(1)
        rows.append(row)
        rhs.append(fr(b_eq[i]))
        basis.append(col_art + i)
    assert all(v >= 0 for v in rhs)

    # Phase 1: drive artificials to zero.
    phase1 = [fr(0)] * n_cols
    for i in range(n_eq):
        phase1[col_art + i] = fr(-1)
    _simplex_phase(rows, rhs, basis, phase1)
    artificial_level = sum(rhs[i] for i in range(len(basis)) if basis[i] >= col_art)
    assert artificial_level == 0, "infeasible program"
    for i in range(len(basis)):
        if basis[i] >= col_art:
            for j in range(col_art):
                if rows[i][j] != 0:
                    pivot = rows[i][j]
                    rows[i] = [v / pivot for v in rows[i]]
                    rhs[i] = rhs[i] / pivot
                    for k in range(len(basis)):
                        if k != i and rows[k][j] != 0:
                            factor = rows[k][j]
                            rows[k] = [a - factor * b for a, b in zip(rows[k], rows[i])]
                            rhs[k] = rhs[k] - factor * rhs[i]
                    basis[i] = j
                    break

    # Phase 2: original objective, artificials forbidden.
    phase2 = [fr(v) for v in c] + [fr(0)] * (n_cols - n)
    blocked = fr(-10**9) * (1 + sum(abs(fr(v)) for v in c))
    for i in range(n_eq):
        phase2[col_art + i] = blocked
    _simplex_phase(rows, rhs, basis, phase2)

    x = [fr(0)] * n
    for i, b in enumerate(basis):
        if b < n:
            x[b] = rhs[i]
    value = sum(fr(ci) * xi for ci, xi in zip(c, x))
    return [float(v) for v in x], float(value)
