"""Dense two-phase simplex over the rationals with Bland's anti-cycling rule.

Both the HBL exponent problem and the log-space tiling programs are tiny
(tens of rows), so an exact tableau is cheap and makes every result
reproducible bit-for-bit.
"""

from dataclasses import dataclass, field
from fractions import Fraction

from .exact import as_fraction


class LpInfeasible(ValueError):
    pass


class LpUnbounded(ValueError):
    pass


@dataclass
class LpResult:
    x: list
    objective: Fraction
    tight: list = field(default_factory=list)


def _pivot(T, basis, r, c):
    row = T[r]
    p = row[c]
    if p != 1:
        inv = 1 / p
        T[r] = row = [v * inv for v in row]
    for i, other in enumerate(T):
        if i != r and other[c] != 0:
            f = other[c]
            T[i] = [a - f * b for a, b in zip(other, row)]
    basis[r] = c


def _run(T, basis, allowed):
    """Minimize the objective held in the last tableau row (Bland's rule)."""
    obj = len(T) - 1
    while True:
        cost = T[obj]
        enter = next((j for j in allowed if cost[j] < 0), None)
        if enter is None:
            return
        best = None
        for i in range(obj):
            a = T[i][enter]
            if a > 0:
                key = (T[i][-1] / a, basis[i])
                if best is None or key < best[0]:
                    best = (key, i)
        if best is None:
            raise LpUnbounded("objective is unbounded below")
        _pivot(T, basis, best[1], enter)


def linprog(c, A_ub=(), b_ub=(), A_eq=(), b_eq=(), upper=None):
    """Minimize ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq``, ``x >= 0``.

    ``upper`` optionally gives per-variable upper bounds (``None`` for none);
    they are appended after ``A_ub`` as extra rows, so ``tight`` indices past
    ``len(A_ub)`` refer to variables sitting at their upper bound.
    Raises LpInfeasible or LpUnbounded.
    """
    c = [as_fraction(v) for v in c]
    n = len(c)
    ub = [([as_fraction(v) for v in row], as_fraction(b)) for row, b in zip(A_ub, b_ub)]
    if upper is not None:
        for j, u in enumerate(upper):
            if u is not None:
                e = [Fraction(0)] * n
                e[j] = Fraction(1)
                ub.append((e, as_fraction(u)))
    eq = [([as_fraction(v) for v in row], as_fraction(b)) for row, b in zip(A_eq, b_eq)]
    for row, _ in ub + eq:
        if len(row) != n:
            raise ValueError("constraint row length does not match objective")

    m_ub, m = len(ub), len(ub) + len(eq)
    n_art = sum(1 for _, b in ub if b < 0) + len(eq)
    width = n + m_ub + n_art
    T, basis = [], []
    art = n + m_ub
    for i, (row, b) in enumerate(ub):
        t = row + [Fraction(0)] * (width - n) + [b]
        t[n + i] = Fraction(1)
        if b < 0:
            t = [-v for v in t]
            t[art] = Fraction(1)
            basis.append(art)
            art += 1
        else:
            basis.append(n + i)
        T.append(t)
    for row, b in eq:
        t = row + [Fraction(0)] * (width - n) + [b]
        if b < 0:
            t = [-v for v in t]
        t[art] = Fraction(1)
        basis.append(art)
        art += 1
        T.append(t)

    first_art = n + m_ub
    if n_art:
        cost = [Fraction(0)] * (width + 1)
        for i in range(m):
            if basis[i] >= first_art:
                cost = [a - b for a, b in zip(cost, T[i])]
        for j in range(first_art, width):
            cost[j] = Fraction(0)
        T.append(cost)
        _run(T, basis, range(width))
        if T[-1][-1] != 0:
            raise LpInfeasible("constraints admit no solution")
        T.pop()
        # Drive zero-level artificials out of the basis; drop redundant rows.
        i = 0
        while i < len(T):
            if basis[i] >= first_art:
                j = next((j for j in range(first_art) if T[i][j] != 0), None)
                if j is None:
                    del T[i], basis[i]
                    continue
                _pivot(T, basis, i, j)
            i += 1
        T = [row[:first_art] + row[-1:] for row in T]

    cost = c + [Fraction(0)] * (first_art - n) + [Fraction(0)]
    for i, bcol in enumerate(basis):
        if cost[bcol] != 0:
            f = cost[bcol]
            cost = [a - f * b for a, b in zip(cost, T[i])]
    T.append(cost)
    _run(T, basis, range(first_art))

    x = [Fraction(0)] * first_art
    for i, bcol in enumerate(basis):
        x[bcol] = T[i][-1]
    sol = x[:n]
    tight = [i for i, (row, b) in enumerate(ub)
             if sum(a * v for a, v in zip(row, sol)) == b]
    return LpResult(sol, sum(a * v for a, v in zip(c, sol)), tight)
