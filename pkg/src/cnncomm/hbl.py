"""Discrete HBL exponents for integer array-access maps.

Subgroups are handled through their rational spans: every subspace is kept
as a reduced row-echelon basis over Q, which is unique per subspace and
doubles as a hashable key for deduplication.
"""

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import gcd
import warnings

from .lp import LpInfeasible, linprog

DEFAULT_CAP = 512


class LatticeCapWarning(RuntimeWarning):
    pass


class HblInfeasible(ValueError):
    def __init__(self, constraint):
        super().__init__(f"no exponents in [0,1] satisfy {constraint}")
        self.constraint = constraint


@dataclass(frozen=True)
class IntHom:
    matrix: tuple
    label: str = ""

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in r) for r in self.matrix)
        if not rows or not rows[0]:
            raise ValueError("homomorphism matrix must be non-empty")
        if any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("ragged homomorphism matrix")
        object.__setattr__(self, "matrix", rows)

    @property
    def domain_dim(self):
        return len(self.matrix[0])

    @property
    def codomain_dim(self):
        return len(self.matrix)

    def apply(self, v):
        return tuple(sum(a * x for a, x in zip(row, v)) for row in self.matrix)


def rref(rows, d):
    """Reduced row-echelon form of ``rows`` (zero rows removed)."""
    M = [[Fraction(v) for v in r] for r in rows]
    out = []
    col = 0
    while M and col < d:
        piv = next((i for i, r in enumerate(M) if r[col] != 0), None)
        if piv is None:
            col += 1
            continue
        r = M.pop(piv)
        inv = 1 / r[col]
        r = [v * inv for v in r]
        M = [[a - m[col] * b for a, b in zip(m, r)] if m[col] else m for m in M]
        out = [[a - o[col] * b for a, b in zip(o, r)] if o[col] else o for o in out]
        out.append(r)
        col += 1
    return [tuple(r) for r in out]


@dataclass(frozen=True)
class RatSubspace:
    dim: int
    basis: tuple

    @classmethod
    def span(cls, rows, d):
        return cls(d, tuple(rref(rows, d)))

    @classmethod
    def zero(cls, d):
        return cls(d, ())

    @classmethod
    def full(cls, d):
        return cls.span([[int(i == j) for j in range(d)] for i in range(d)], d)

    @property
    def rank(self):
        return len(self.basis)

    def __contains__(self, v):
        return RatSubspace.span(list(self.basis) + [v], self.dim).rank == self.rank


def _nullspace(rows, d):
    R = rref(rows, d)
    pivots = [next(j for j, v in enumerate(r) if v != 0) for r in R]
    free = [j for j in range(d) if j not in pivots]
    vecs = []
    for f in free:
        v = [Fraction(0)] * d
        v[f] = Fraction(1)
        for r, p in zip(R, pivots):
            v[p] = -r[f]
        vecs.append(v)
    return RatSubspace.span(vecs, d)


def kernel_of(hom):
    return _nullspace(hom.matrix, hom.domain_dim)


@lru_cache(maxsize=4096)
def complement(a):
    """Orthogonal complement under the standard dot product."""
    if a.rank == 0:
        return RatSubspace.full(a.dim)
    return _nullspace(a.basis, a.dim)


def _check_dims(a, b):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")


def subspace_sum(a, b):
    _check_dims(a, b)
    return RatSubspace.span(list(a.basis) + list(b.basis), a.dim)


def subspace_intersect(a, b):
    _check_dims(a, b)
    return complement(subspace_sum(complement(a), complement(b)))


def image_rank(hom, h):
    if h.rank == 0:
        return 0
    return len(rref([hom.apply(v) for v in h.basis], hom.codomain_dim))


@dataclass(frozen=True)
class Lattice:
    members: tuple
    capped: bool = False

    def __len__(self):
        return len(self.members)

    def __contains__(self, h):
        return h in self.members


def _order(h):
    return (h.rank, h.basis)


def lattice_closure(seeds, cap=DEFAULT_CAP):
    """Smallest family containing ``seeds`` and zero, closed under + and intersection."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed subspace")
    d = seeds[0].dim
    if any(s.dim != d for s in seeds):
        raise ValueError("seeds must share one ambient dimension")
    members = {RatSubspace.zero(d)}
    members.update(seeds)
    frontier = sorted(members, key=_order)
    known = sorted(members, key=_order)
    capped = False
    done = set()
    while frontier and not capped:
        fresh = []
        for a in frontier:
            for b in known:
                if (b, a) in done or a == b:
                    continue
                done.add((a, b))
                for h in (subspace_sum(a, b), subspace_intersect(a, b)):
                    if h not in members:
                        members.add(h)
                        fresh.append(h)
            if len(members) > cap:
                capped = True
                warnings.warn(f"lattice closure exceeded {cap} members; stopping early",
                              LatticeCapWarning, stacklevel=2)
                break
        known.extend(fresh)
        frontier = fresh
    return Lattice(tuple(sorted(members, key=_order)), capped)


@dataclass(frozen=True, order=True)
class HblConstraint:
    """``lhs_rank <= sum_j coeffs[j] * s_j``, scaled so the integers are coprime."""

    lhs_rank: int
    coeffs: tuple

    def satisfied_by(self, s):
        return sum(c * v for c, v in zip(self.coeffs, s)) >= self.lhs_rank

    def format(self, names=None):
        names = names or [f"s{j + 1}" for j in range(len(self.coeffs))]
        terms = [(f"{c}*{n}" if c != 1 else n) for c, n in zip(self.coeffs, names) if c]
        return f"{self.lhs_rank} <= {' + '.join(terms) or '0'}"

    def __str__(self):
        return self.format()


def _normalized(lhs, coeffs):
    g = gcd(lhs, *coeffs)
    return HblConstraint(lhs // g, tuple(c // g for c in coeffs))


def _implied(con, others, m):
    """Does ``others`` together with s >= 0 force ``con``?"""
    A = [[-c for c in o.coeffs] for o in others]
    b = [-o.lhs_rank for o in others]
    res = linprog(list(con.coeffs), A, b)
    return res.objective >= con.lhs_rank


def derive_constraints(lattice, homs, prune=True):
    """One constraint per nonzero lattice member plus the whole space, deduplicated.

    The whole space gives the scaling condition d <= sum_j s_j rank(phi_j),
    which the closure of the kernels need not contain (e.g. injective maps).

    With ``prune`` the list is reduced to the irredundant system: a
    constraint is dropped when the remaining ones and nonnegativity of the
    exponents already imply it. The upper bound s_j <= 1 is deliberately not
    used for pruning, so the result is the facet list of the HBL cone.
    """
    homs = list(homs)
    out = set()
    d = homs[0].domain_dim
    for h in (*lattice.members, RatSubspace.full(d)):
        if h.rank == 0:
            continue
        coeffs = tuple(image_rank(f, h) for f in homs)
        out.add(_normalized(h.rank, coeffs))
    cons = sorted(out)
    if prune:
        for con in sorted(cons, key=lambda c: (-c.lhs_rank, tuple(-v for v in c.coeffs))):
            rest = [c for c in cons if c != con]
            if rest and _implied(con, rest, len(homs)):
                cons = rest
    return cons


@dataclass(frozen=True)
class ExponentVector:
    s: tuple
    total: Fraction


def minimize_exponents(constraints, m=None):
    """Exact minimum of sum(s) over s in [0,1]^m meeting every constraint.

    Ties are broken by the smallest possible largest exponent and then
    lexicographically, which singles out the symmetric optimum whenever the
    optimal face has one.
    """
    constraints = list(constraints)
    if m is None:
        if not constraints:
            raise ValueError("cannot infer the number of exponents")
        m = len(constraints[0].coeffs)
    ones = (Fraction(1),) * m
    for con in constraints:
        if not con.satisfied_by(ones):
            raise HblInfeasible(con)
    A = [[-Fraction(c) for c in con.coeffs] for con in constraints]
    b = [-Fraction(con.lhs_rank) for con in constraints]
    upper = [1] * m
    total = linprog([1] * m, A, b, upper=upper).objective

    # Stage 2: variables (s, z); minimize z with s_j <= z on the optimal face.
    A2 = [row + [0] for row in A]
    A2 += [[int(i == j) for i in range(m)] + [-1] for j in range(m)]
    b2 = b + [0] * m
    eq = [[1] * m + [0]]
    zmax = linprog([0] * m + [1], A2, b2, eq, [total], upper=upper + [1]).objective

    A3 = A2 + [[0] * m + [1]]
    b3 = b2 + [zmax]
    fixed_eq, fixed_b = list(eq), [total]
    s = None
    for j in range(m):
        cost = [int(i == j) for i in range(m)] + [0]
        res = linprog(cost, A3, b3, fixed_eq, fixed_b, upper=upper + [1])
        s = res.x[:m]
        fixed_eq.append(cost)
        fixed_b.append(res.objective)
    s = tuple(s)
    for con in constraints:
        assert con.satisfied_by(s), con
    return ExponentVector(s, sum(s))


def optimal_exponents(homs, cap=DEFAULT_CAP):
    """Constraints and optimal exponents straight from a homomorphism family."""
    homs = list(homs)
    lat = lattice_closure([kernel_of(h) for h in homs], cap=cap)
    cons = derive_constraints(lat, homs)
    return cons, minimize_exponents(cons, len(homs))


def _select(indices, d):
    return [[int(j == i) for j in range(d)] for i in indices]


def cnn_homomorphisms(stride_w=1, stride_h=1):
    """Input, Filter, Output access maps of the 7-loop nest (i1..i7)."""
    if stride_w < 1 or stride_h < 1:
        raise ValueError("strides must be >= 1")
    phi_in = [
        [1, 0, 0, 0, 0, 0, 0],
        [0, 1, 0, 0, 0, 0, 0],
        [0, 0, 0, stride_w, 0, 1, 0],
        [0, 0, 0, 0, stride_h, 0, 1],
    ]
    return (IntHom(phi_in, "I"),
            IntHom(_select([1, 2, 5, 6], 7), "F"),
            IntHom(_select([0, 2, 3, 4], 7), "O"))


def lifted_homomorphisms():
    """Access maps with filter offsets fixed, over (i1, i2, i3, i4, i5, r6, r7)."""
    return (IntHom(_select([0, 1, 3, 5, 4, 6], 7), "I"),
            IntHom(_select([1, 2, 5, 6], 7), "F"),
            IntHom(_select([0, 2, 3, 4], 7), "O"))


def matmul_homomorphisms():
    """C[i,k] += A[i,j] * B[j,k] over (i, j, k)."""
    return (IntHom(_select([0, 1], 3), "A"),
            IntHom(_select([1, 2], 3), "B"),
            IntHom(_select([0, 2], 3), "C"))


def parse_matrices(text):
    """Blank-line separated integer matrices; a leading ``# name`` labels a block."""
    blocks, rows, label = [], [], None

    def flush():
        nonlocal rows, label
        if rows:
            blocks.append(IntHom(rows, label or f"phi{len(blocks) + 1}"))
        rows, label = [], None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            flush()
            continue
        if line.startswith("#"):
            if not rows and label is None:
                label = line[1:].strip() or None
            continue
        try:
            rows.append([int(t) for t in line.split()])
        except ValueError:
            raise ValueError(f"line {lineno}: expected integers, got {line!r}") from None
        if len(rows[-1]) != len(rows[0]):
            raise ValueError(f"line {lineno}: row length differs within a matrix")
    flush()
    if not blocks:
        raise ValueError("no matrices found")
    d = blocks[0].domain_dim
    if any(h.domain_dim != d for h in blocks):
        raise ValueError("all matrices must have the same number of columns")
    return blocks
