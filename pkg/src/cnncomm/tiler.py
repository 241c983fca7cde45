"""Log-space linear programs for serial, parallel and two-buffer tilings.

Serial tilings block the lifted nine-loop nest in which each filter index is
split as i6 = stride_w*q6 + r6 (r6 < stride_w); the ``*q`` blocks cover the
quotient loop and the ``*r`` blocks the remainder loop.
"""

from dataclasses import dataclass, fields, astuple
from fractions import Fraction
import math

from .exact import rational_log
from .lp import LpInfeasible, linprog
from .model import derive_sizes, parse_kv, LayerFileError


class TilingInfeasible(ValueError):
    pass


class SearchCancelled(RuntimeError):
    pass


@dataclass(frozen=True)
class SerialTiling:
    b_N: int
    b_cI: int
    b_cO: int
    b_wO: int
    b_hO: int
    b_wFq: int
    b_hFq: int
    b_wFr: int
    b_hFr: int

    def as_tuple(self):
        return astuple(self)

    def output_tile(self):
        return self.b_N * self.b_cO * self.b_wO * self.b_hO

    def filter_tile(self):
        return self.b_cI * self.b_cO * self.b_wFq * self.b_hFq * self.b_wFr * self.b_hFr

    def input_tile(self):
        """Input footprint as used by the memory constraints (one halo slot per axis extra)."""
        return (self.b_N * self.b_cI * (self.b_wO + self.b_wFq) * (self.b_hO + self.b_hFq)
                * self.b_wFr * self.b_hFr)

    def product(self):
        return math.prod(astuple(self))


@dataclass(frozen=True)
class ParallelTiling:
    a_N: int
    a_cI: int
    a_cO: int
    a_wO: int
    a_hO: int
    a_wF: int
    a_hF: int

    def as_tuple(self):
        return astuple(self)


@dataclass(frozen=True)
class LpSolution:
    x: tuple
    objective: float
    tight_constraints: tuple
    exact_x: tuple = ()


@dataclass(frozen=True)
class TilingResult:
    tiling: object
    lp: LpSolution = None
    degenerate: bool = False
    note: str = ""


SERIAL_FIELDS = tuple(f.name for f in fields(SerialTiling))
# Tile-loop order shared by the blocking volume model and the simulator:
# output-tile loops outermost, reduction loops inside, so each output tile
# stays resident until it is fully summed.
LOOP_ORDER = ("b_N", "b_cO", "b_wO", "b_hO", "b_cI", "b_wFq", "b_wFr", "b_hFq", "b_hFr")
PARALLEL_FIELDS = tuple(f.name for f in fields(ParallelTiling))

# Column order of the serial program's constraint matrix: the two remainder
# loops sit next to their quotient loops (N, cI, cO, wO, hO, wFq, wFr, hFq, hFr).
SERIAL_LP_ORDER = ("b_N", "b_cI", "b_cO", "b_wO", "b_hO", "b_wFq", "b_wFr", "b_hFq", "b_hFr")
SERIAL_A = (
    (1, 0, 1, 1, 1, 0, 0, 0, 0),
    (0, 1, 1, 0, 0, 1, 1, 1, 1),
    (1, 1, 0, 1, 1, 0, 1, 0, 1),
    (1, 1, 0, 1, 0, 0, 1, 1, 1),
    (1, 1, 0, 0, 1, 1, 1, 0, 1),
    (1, 1, 0, 0, 0, 1, 1, 1, 1),
)
PARALLEL_A = (
    (-1, 0, -1, -1, -1, 0, 0),
    (0, -1, -1, 0, 0, -1, -1),
    (-1, -1, 0, -1, -1, 0, 0),
    (-1, -1, 0, -1, 0, 0, -1),
    (-1, -1, 0, 0, -1, -1, 0),
    (-1, -1, 0, 0, 0, -1, -1),
    (-1, -1, -1, -1, -1, -1, -1),
)


def serial_extents(layer):
    """Loop extents of the lifted nest, in SerialTiling field order."""
    return {
        "b_N": layer.N, "b_cI": layer.c_in, "b_cO": layer.c_out,
        "b_wO": layer.w_out, "b_hO": layer.h_out,
        "b_wFq": -(-layer.w_f // layer.stride_w), "b_hFq": -(-layer.h_f // layer.stride_h),
        "b_wFr": layer.stride_w, "b_hFr": layer.stride_h,
    }


def full_serial_tiling(layer):
    return SerialTiling(**serial_extents(layer))


def ones_serial_tiling():
    return SerialTiling(*([1] * len(SERIAL_FIELDS)))


def serial_fits(prec, M, t):
    """Which memory constraints fail (each array gets p_j M / p_T words)."""
    pT = prec.p_total
    bad = []
    if t.output_tile() * pT > M:
        bad.append("output tile")
    if t.filter_tile() * pT > M:
        bad.append("filter tile")
    if t.input_tile() * pT > M:
        bad.append("input tile")
    return bad


def validate_serial_tiling(layer, prec, machine, t):
    """Violated constraints of ``t`` (empty list when valid)."""
    bad = []
    ext = serial_extents(layer)
    for name in SERIAL_FIELDS:
        v = getattr(t, name)
        if not 1 <= v <= ext[name]:
            bad.append(f"1 <= {name} <= {ext[name]}")
    return bad + serial_fits(prec, Fraction(machine.cache_words), t)


def round_tiles(values, extents, fits):
    """Integer blocks from continuous ones.

    Floors every value (clamped to [1, extent]), then repeatedly tries to add
    one to each block, largest fractional loss first, keeping ``fits`` true.
    Returns None when even the floored blocks do not fit.
    """
    blocks = [min(e, max(1, math.floor(v + 1e-9))) for v, e in zip(values, extents)]
    if not fits(blocks):
        return None
    changed = True
    while changed:
        changed = False
        order = sorted(range(len(blocks)), key=lambda i: (blocks[i] - values[i], i))
        for i in order:
            if blocks[i] < extents[i]:
                trial = list(blocks)
                trial[i] += 1
                if fits(trial):
                    blocks = trial
                    changed = True
    return blocks


def _lp_solution(res):
    x = tuple(float(v) for v in res.x)
    return LpSolution(x, float(sum(res.x)), tuple(res.tight), tuple(res.x))


def serial_lp_tiles(layer, prec, machine, polish=True):
    """Communication-minimizing serial blocking from the log-space program.

    The LP optimum is exponentiated and rounded with round_tiles; ``polish``
    then runs local_search so that slack left by the program's conservative
    input split is recovered.
    """
    M = machine.cache_words
    pT = prec.p_total
    if M <= 4 * pT:
        raise TilingInfeasible(f"cache of {M} words cannot hold even unit tiles (needs > {4 * pT})")
    ext = serial_extents(layer)
    lp_ext = [ext[k] for k in SERIAL_LP_ORDER]
    r1 = 1 - rational_log(pT, M)
    r4 = 1 - rational_log(4 * pT, M)
    b = [r1, r1, r4, r4, r4, r4]
    upper = [rational_log(e, M) if e > 1 else Fraction(0) for e in lp_ext]
    res = linprog([-1] * 9, SERIAL_A, b, upper=upper)
    lp = _lp_solution(res)
    cont = {k: float(M) ** float(x) for k, x in zip(SERIAL_LP_ORDER, res.x)}
    values = [cont[k] for k in SERIAL_FIELDS]
    extents = [ext[k] for k in SERIAL_FIELDS]
    Mf = Fraction(M)
    fits = lambda bl: not serial_fits(prec, Mf, SerialTiling(*bl))
    blocks = round_tiles(values, extents, fits)
    if blocks is None:
        return TilingResult(ones_serial_tiling(), lp, degenerate=True)
    if polish:
        score = _serial_score(prec)
        starts = (blocks, [1] * len(blocks))
        blocks = max((local_search(b, extents, fits, score) for b in starts), key=score)
    return TilingResult(SerialTiling(*blocks), lp)


def _serial_score(prec):
    def score(bl):
        t = SerialTiling(*bl)
        return (t.product(), -(prec.p_in * t.input_tile() + prec.p_f * t.filter_tile()
                               + prec.p_out * t.output_tile()))
    return score


def processor_count(layer, t):
    return math.prod(-(-n // a) for n, a in zip(layer.extents, t.as_tuple()))


def validate_parallel_tiling(layer, machine, t):
    bad = []
    for name, n, a in zip(PARALLEL_FIELDS, layer.extents, t.as_tuple()):
        if not 1 <= a <= n:
            bad.append(f"1 <= {name} <= {n}")
    if not bad and processor_count(layer, t) > machine.processors:
        bad.append(f"processor count {processor_count(layer, t)} > {machine.processors}")
    return bad


def parallel_lp_system(layer, prec, P):
    """Right-hand sides and box bounds of the parallel program (logs base P)."""
    L = layer
    pT = prec.p_total
    lg = lambda v: rational_log(v, P)
    one_p, four_p = lg(pT), lg(4 * pT)
    # The sixth row's "h_C" is read as h_O.
    b = [
        1 - one_p - lg(L.N * L.c_out * L.w_f * L.h_f),
        1 - one_p - lg(L.c_in * L.c_out * L.w_out * L.h_out),
        1 - four_p - lg(L.N * L.c_in * L.w_f * L.h_f),
        1 - four_p - lg(L.N * L.c_in * L.w_f * L.h_out),
        1 - four_p - lg(L.N * L.c_in * L.h_out * L.w_f),
        1 - four_p - lg(L.N * L.c_in * L.w_out * L.h_out),
        1 - lg(L.N * L.c_in * L.c_out * L.w_out * L.h_out * L.w_f * L.h_f),
    ]
    upper = [lg(n) if n > 1 else Fraction(0) for n in L.extents]
    return b, upper


def parallel_lp_tiles(layer, prec, machine):
    P, M = machine.processors, machine.mem_words_per_proc
    s = derive_sizes(layer, prec)
    total = prec.p_in * s.size_in + prec.p_f * s.size_f + prec.p_out * s.size_out
    if total > P * M:
        raise TilingInfeasible(f"data ({float(total):.6g} words) exceeds aggregate memory P*M = {P * M}")
    if P == 1:
        return TilingResult(ParallelTiling(*layer.extents))
    b, upper = parallel_lp_system(layer, prec, P)
    rows, note = PARALLEL_A, ""
    try:
        res = linprog([1] * 7, rows, b, upper=upper)
    except LpInfeasible:
        # The footprint rows can demand more than the loop extents allow when
        # P is small; keep only the processor-budget row.
        rows, b = PARALLEL_A[-1:], b[-1:]
        note = "footprint rows infeasible at this P; solved with the budget row only"
        res = linprog([1] * 7, rows, b, upper=upper)
    lp = _lp_solution(res)
    x = _balanced_footprints(layer, prec, P, rows, b, upper, res.objective)
    cont = [float(P) ** float(v) for v in x]
    return TilingResult(round_parallel(layer, cont, P), lp, note=note)


# (variables, log weight) of each per-processor footprint term, variables in
# ParallelTiling order: the output and filter terms, then the four input halo terms.
_FOOTPRINT_TERMS = (
    ((0, 2, 3, 4), lambda L, p: p.p_out),
    ((1, 2, 5, 6), lambda L, p: p.p_f),
    ((0, 1, 3, 4), lambda L, p: p.p_in * L.stride_w * L.stride_h),
    ((0, 1, 3, 6), lambda L, p: p.p_in * L.stride_w),
    ((0, 1, 5, 4), lambda L, p: p.p_in * L.stride_h),
    ((0, 1, 5, 6), lambda L, p: p.p_in),
)


def _balanced_footprints(layer, prec, P, rows, b, upper, work):
    """Among optimal points of the work program, the one whose largest
    per-processor footprint (log base P) is smallest.

    The work program alone fixes only the product of the blocks, and the
    vertex simplex lands on tends to split the image down to single pixels.
    """
    A = [list(row) + [0] for row in rows]
    rhs = list(b)
    for idx, weight in _FOOTPRINT_TERMS:
        A.append([int(i in idx) for i in range(7)] + [-1])
        rhs.append(-rational_log(weight(layer, prec), P))
    z_cap = sum(upper) + 2 + max(abs(v) for v in rhs)
    res = linprog([0] * 7 + [1], A, rhs, [[1] * 7 + [0]], [work], upper=list(upper) + [z_cap])
    return res.x[:7]


def round_parallel(layer, values, P):
    """Integer segment lengths honoring the processor budget.

    Starts from the ceilings, grows blocks until at most P processors are
    needed, then shrinks blocks (largest overshoot first) while it still fits.
    """
    ext = layer.extents
    a = [min(n, max(1, math.ceil(v - 1e-9))) for v, n in zip(values, ext)]

    def count(bl):
        return math.prod(-(-n // x) for n, x in zip(ext, bl))

    while count(a) > P:
        # Grow the block whose increase removes the most processors.
        best = None
        for i, (n, x) in enumerate(zip(ext, a)):
            if x < n:
                segs = -(-n // x)
                nxt = -(-n // (segs - 1)) if segs > 1 else n
                trial = list(a)
                trial[i] = nxt
                key = (count(trial), i)
                if best is None or key < best[0]:
                    best = (key, trial)
        a = best[1]
    changed = True
    while changed:
        changed = False
        order = sorted(range(7), key=lambda i: (values[i] - a[i], i))
        for i in order:
            if a[i] > 1:
                segs = -(-ext[i] // a[i])
                trial = list(a)
                trial[i] = -(-ext[i] // (segs + 1))
                if trial[i] < a[i] and count(trial) <= P:
                    a = trial
                    changed = True
    return ParallelTiling(*a)


def two_buffer_fits(prec, machine, t):
    """Scratchpad holds input + filter tiles, accumulator holds the output tile."""
    scratch = prec.p_in * t.input_tile() + prec.p_f * t.filter_tile()
    return scratch <= machine.usable_scratchpad and t.output_tile() <= machine.usable_accumulator


def validate_two_buffer_tiling(layer, prec, machine, t, no_tile_image=False):
    bad = []
    ext = serial_extents(layer)
    for name in SERIAL_FIELDS:
        v = getattr(t, name)
        if not 1 <= v <= ext[name]:
            bad.append(f"1 <= {name} <= {ext[name]}")
    if prec.p_in * t.input_tile() + prec.p_f * t.filter_tile() > machine.usable_scratchpad:
        bad.append("scratchpad")
    if t.output_tile() > machine.usable_accumulator:
        bad.append("accumulator")
    if no_tile_image and (t.b_wO != layer.w_out or t.b_hO != layer.h_out):
        bad.append("image tiled")
    return bad


def two_buffer_tiles(layer, prec, machine, no_tile_image=False, cancel=None, max_iter=10_000):
    """Integer tiling maximizing updates per tile on a scratchpad/accumulator machine.

    An LP relaxation (scratchpad split evenly between filter and the four
    input terms) seeds a coordinate search over +-1 and x2 / /2 moves, single
    and paired, that stops at the first tiling with no better feasible move.
    ``cancel`` may be any object with ``is_set()``.
    """
    ext = serial_extents(layer)
    extents = [ext[k] for k in SERIAL_FIELDS]
    pinned = {}
    if no_tile_image:
        pinned = {"b_wO": layer.w_out, "b_hO": layer.h_out}

    def feasible(bl):
        t = SerialTiling(*bl)
        return not validate_two_buffer_tiling(layer, prec, machine, t, no_tile_image)

    start = [pinned.get(k, 1) for k in SERIAL_FIELDS]
    if not feasible(start):
        raise TilingInfeasible("buffers cannot hold the smallest admissible tile")

    S = Fraction(machine.usable_scratchpad)
    A_cap = Fraction(machine.usable_accumulator)
    lg = lambda v: rational_log(v, 2)
    idx = {k: i for i, k in enumerate(SERIAL_FIELDS)}
    rows, rhs = [], []

    def row(names, cap):
        rows.append([int(k in names) for k in SERIAL_FIELDS])
        rhs.append(lg(cap))

    row({"b_N", "b_cO", "b_wO", "b_hO"}, A_cap)
    row({"b_cI", "b_cO", "b_wFq", "b_hFq", "b_wFr", "b_hFr"}, S / (2 * prec.p_f))
    for w in ("b_wO", "b_wFq"):
        for h in ("b_hO", "b_hFq"):
            row({"b_N", "b_cI", w, h, "b_wFr", "b_hFr"}, S / (8 * prec.p_in))
    upper = [lg(e) if e > 1 else Fraction(0) for e in extents]
    lower_rows, lower_b = [], []
    for k, v in pinned.items():
        e = [0] * 9
        e[idx[k]] = -1
        lower_rows.append(e)
        lower_b.append(-lg(v))
    try:
        res = linprog([-1] * 9, rows + lower_rows, rhs + lower_b, upper=upper)
        values = [max(1.0, 2.0 ** float(x)) for x in res.x]
    except LpInfeasible:
        values = [float(v) for v in start]
    for k, v in pinned.items():
        values[idx[k]] = float(v)
    blocks = round_tiles(values, extents, feasible) or start

    def score(bl):
        t = SerialTiling(*bl)
        return (t.product(), -(prec.p_in * t.input_tile() + prec.p_f * t.filter_tile()))

    blocks = local_search(blocks, extents, feasible, score, cancel, max_iter)
    return SerialTiling(*blocks)


def local_search(blocks, extents, feasible, score, cancel=None, max_iter=10_000):
    """Best-improvement search over +-1 and x2 / /2 moves on one block, or a
    shrinking move on one block paired with a growing move on another."""

    def moves(bl):
        for i in range(len(bl)):
            for nv in (bl[i] + 1, bl[i] - 1, bl[i] * 2, bl[i] // 2):
                if 1 <= nv <= extents[i] and nv != bl[i]:
                    yield i, nv

    blocks = list(blocks)
    best = score(blocks)
    for _ in range(max_iter):
        if cancel is not None and cancel.is_set():
            raise SearchCancelled("tile search cancelled")
        improved = None
        for i, nv in moves(blocks):
            trial = list(blocks)
            trial[i] = nv
            cands = [trial]
            if nv < blocks[i]:
                for j, nv2 in moves(trial):
                    if j != i and nv2 > trial[j]:
                        t2 = list(trial)
                        t2[j] = nv2
                        cands.append(t2)
            for cand in cands:
                if feasible(cand):
                    sc = score(cand)
                    if sc > best and (improved is None or sc > improved[0]):
                        improved = (sc, cand)
        if improved is None:
            break
        best, blocks = improved
    return blocks


def format_tiling(t):
    return "".join(f"{f.name} = {getattr(t, f.name)}\n" for f in fields(t))


def parse_tiling(text):
    """Read a serial or parallel tiling from ``key = value`` text."""
    keys = SERIAL_FIELDS + PARALLEL_FIELDS
    kv = parse_kv(text, keys)
    names = set(kv)
    for cls, want in ((SerialTiling, SERIAL_FIELDS), (ParallelTiling, PARALLEL_FIELDS)):
        if names == set(want):
            vals = {}
            for k in want:
                value, line = kv[k]
                try:
                    vals[k] = int(value)
                except ValueError:
                    raise LayerFileError(f"{k} must be an integer", line) from None
            return cls(**vals)
    raise LayerFileError("tiling must list exactly the serial or the parallel block keys")
