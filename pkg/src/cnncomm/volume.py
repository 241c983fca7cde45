"""Analytical traffic models for naive, blocked and im2col schedules.

The blocked models follow the tile-loop order ``tiler.LOOP_ORDER``. A tile
stays resident while only loops it does not depend on advance beneath the
innermost loop it does depend on; every other step reloads it. These are
models, checked against the simulator at toy scale, not bounds.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
import csv
import io
import math

from .bounds import parallel_lower_bound, serial_lower_bound
from .exact import floor_root, fmt6
from .model import ParallelMachine, SerialMachine, derive_sizes, input_span
from .tiler import (LOOP_ORDER, TilingInfeasible, parallel_lp_tiles, serial_extents,
                    serial_lp_tiles, validate_parallel_tiling, validate_serial_tiling)

CSV_HEADER = ("param", "bound", "naive", "blocking", "im2col",
              "ratio_naive", "ratio_blocking", "ratio_im2col", "note")

# Loops each array's tile depends on.
_DEPENDS = {
    "in": {"b_N", "b_cI", "b_wO", "b_hO", "b_wFq", "b_wFr", "b_hFq", "b_hFr"},
    "f": {"b_cI", "b_cO", "b_wFq", "b_wFr", "b_hFq", "b_hFr"},
    "out": {"b_N", "b_cO", "b_wO", "b_hO"},
}


class InvalidTiling(ValueError):
    pass


@dataclass(frozen=True)
class TrafficReport:
    words_in: Fraction
    words_f: Fraction
    words_out: Fraction
    total: Fraction
    bound: Fraction = None
    ratio: float = None


def _report(w_in, w_f, w_out, bound=None):
    total = w_in + w_f + w_out
    ratio = float(total / bound) if bound is not None and bound > 0 else None
    return TrafficReport(w_in, w_f, w_out, total, bound, ratio)


def _blocks(n, b):
    return [range(s, min(s + b, n)) for s in range(0, n, b)]


def _axis_touched(n_out, f, stride, b_out, b_q, b_r):
    """Sum over (output, quotient, remainder) tile triples of the input
    coordinates the triple touches along one spatial axis."""
    total = 0
    for ro in _blocks(n_out, b_out):
        for rq in _blocks(-(-f // stride), b_q):
            for rr in _blocks(stride, b_r):
                total += len({stride * (o + q) + r for o in ro for q in rq for r in rr
                              if stride * q + r < f})
    return total


def _axis_first(f, stride, b_out, b_q, b_r):
    """Input coordinates touched by the first (largest) tile triple on one axis."""
    return len({stride * (o + q) + r for o in range(b_out) for q in range(b_q)
                for r in range(b_r) if stride * q + r < f})


def _filter_first(f, stride, b_q, b_r):
    return sum(1 for q in range(b_q) for r in range(b_r) if stride * q + r < f)


def tile_words(layer, prec, t):
    """Words touched by the first tile of ``t``: exact halo, all three arrays."""
    L = layer
    w_in = (t.b_N * t.b_cI * _axis_first(L.w_f, L.stride_w, t.b_wO, t.b_wFq, t.b_wFr)
            * _axis_first(L.h_f, L.stride_h, t.b_hO, t.b_hFq, t.b_hFr))
    w_f = (t.b_cI * t.b_cO * _filter_first(L.w_f, L.stride_w, t.b_wFq, t.b_wFr)
           * _filter_first(L.h_f, L.stride_h, t.b_hFq, t.b_hFr))
    return prec.p_in * w_in + prec.p_f * w_f + prec.p_out * t.output_tile()


def _region(t, ext, order, depth, double=None):
    """Tiling whose first tile is one region: loops at ``depth`` and inside
    untiled, and optionally loop ``double`` covering two consecutive steps."""
    blocks = {k: min(getattr(t, k), ext[k]) for k in ext}
    blocks.update({k: ext[k] for k in order[depth:]})
    if double is not None:
        blocks[double] = min(ext[double], 2 * blocks[double])
    return type(t)(**blocks)


def resident_level(layer, prec, t, M, order=LOOP_ORDER):
    """(depth, merged tiling) for an LRU cache of M words.

    ``depth`` is the outermost loop level whose whole body fits in M; the
    loops inside it are merged into one tile, since the cache reuses their
    entire working set as if it were a single tile.
    """
    ext = serial_extents(layer)
    for depth in range(len(order) + 1):
        merged = _region(t, ext, order, depth)
        if tile_words(layer, prec, merged) <= M:
            return depth, merged
    return len(order), _region(t, ext, order, len(order))


def _visits(layer, prec, t, deps, counts, order, M):
    """How often an array's full sweep of its own tiles is repeated.

    A step of a loop the array does not depend on reuses the array's data
    when the words touched between two visits of the same tile fit in M.
    That gap is one sweep of the outermost loop inside it that advances the
    array's tiles, or a single tile when no such loop is left.
    """
    ext = serial_extents(layer)
    factor = 1
    for pos, k in enumerate(order):
        if k in deps or counts[k] == 1:
            continue
        inner = [i for i in range(pos + 1, len(order))
                 if order[i] in deps and counts[order[i]] > 1]
        gap = tile_words(layer, prec, _region(t, ext, order, inner[0] if inner else len(order)))
        if gap > M:
            factor *= counts[k]
    return factor


def blocking_volume_serial(layer, prec, t, machine=None, order=LOOP_ORDER):
    """Modeled words moved by the tiled nest under an LRU cache of M words.

    Loops are merged inward up to the level whose body fits in the cache
    (resident_level). Input footprints count halos exactly; neighbouring
    input tiles along a spatial axis share their halo when that axis is the
    only thing advancing. Reuse across other loops follows _visits. Outputs
    revisited after eviction cost a read and a store; under the intended
    schedule the output tile stays resident over the whole reduction and
    each output word is written exactly once.
    Without ``machine`` the cache is taken to hold exactly one tile.
    """
    bound = None
    L = layer
    ext = serial_extents(L)
    if machine is not None:
        bad = validate_serial_tiling(layer, prec, machine, t)
        if bad:
            raise InvalidTiling("invalid tiling: " + "; ".join(bad))
        bound = serial_lower_bound(layer, prec, machine).bound
        M = machine.cache_words
        _, t = resident_level(layer, prec, t, M, order)
    else:
        t = _region(t, ext, order, len(order))
        M = tile_words(layer, prec, t)
    counts = {k: -(-ext[k] // getattr(t, k)) for k in ext}
    s = derive_sizes(L, prec)
    w_axis = _axis_touched(L.w_out, L.w_f, L.stride_w, t.b_wO, t.b_wFq, t.b_wFr)
    h_axis = _axis_touched(L.h_out, L.h_f, L.stride_h, t.b_hO, t.b_hFq, t.b_hFr)
    moving = [k for k in order if k in _DEPENDS["in"] and counts[k] > 1]
    if moving and moving[-1] in ("b_wO", "b_hO"):
        k = moving[-1]
        axis = k[2]
        if counts[f"b_{axis}Fq"] == 1 and counts[f"b_{axis}Fr"] == 1:
            if axis == "w":
                w_axis = input_span(L.w_out, L.w_f, L.stride_w)
            else:
                h_axis = input_span(L.h_out, L.h_f, L.stride_h)
    visits = {j: _visits(L, prec, t, deps, counts, order, M) for j, deps in _DEPENDS.items()}
    w_in = prec.p_in * L.N * L.c_in * w_axis * h_axis * visits["in"]
    w_f = prec.p_f * s.size_f * visits["f"]
    w_out = prec.p_out * s.size_out * (2 * visits["out"] - 1)
    return _report(w_in, w_f, w_out, bound)


def _gemm_dims(layer):
    L = layer
    return L.N * L.w_out * L.h_out, L.c_in * L.w_f * L.h_f, L.c_out


def im2col_volume_serial(layer, prec, machine):
    """Expand the input to an (m x k) matrix, then multiply by the (k x n) filter."""
    M = Fraction(machine.cache_words)
    if M < 1:
        raise ValueError("cache must hold at least one word")
    s = derive_sizes(layer, prec)
    m, k, n = _gemm_dims(layer)
    # Classic blocked matmul: A and B stream mkn/sqrt(M) words each, C once.
    half = floor_root(prec.p_in * prec.p_f * prec.p_out / M, 2) * m * k * n
    w_in = prec.p_in * s.size_in + 2 * prec.p_in * m * k + half
    w_f = half
    w_out = prec.p_out * m * n
    return _report(w_in, w_f, w_out, serial_lower_bound(layer, prec, machine).bound)


def naive_volume_serial(layer, prec, machine=None):
    """One operand load per update; outputs written at first touch, read-modify-written after."""
    s = derive_sizes(layer, prec)
    G = s.g_total
    bound = serial_lower_bound(layer, prec, machine).bound if machine is not None else None
    return _report(prec.p_in * G, prec.p_f * G, prec.p_out * (2 * G - s.size_out), bound)


def blocking_volume_parallel(layer, prec, t, machine=None):
    """Words the busiest processor receives: block footprints minus its 1/P shares.

    The input footprint uses the halo form (sw*a_wO + a_wF)(sh*a_hO + a_hF),
    which matches the padded array size, so a single processor owning
    everything receives nothing.
    """
    L = layer
    P = math.prod(-(-n // a) for n, a in zip(L.extents, t.as_tuple()))
    bound = None
    if machine is not None:
        bad = validate_parallel_tiling(layer, machine, t)
        if bad:
            raise InvalidTiling("invalid tiling: " + "; ".join(bad))
        P = machine.processors
        bound = parallel_lower_bound(layer, prec, machine).bound
    s = derive_sizes(L, prec)
    aN, acI, acO, awO, ahO, awF, ahF = t.as_tuple()
    fp_in = aN * acI * (L.stride_w * awO + awF) * (L.stride_h * ahO + ahF)
    fp_f = acI * acO * awF * ahF
    fp_out = aN * acO * awO * ahO
    parts = [max(Fraction(0), p * fp - p * Fraction(size, P)) for p, fp, size in
             zip(prec.as_tuple(), (fp_in, fp_f, fp_out), (s.size_in, s.size_f, s.size_out))]
    return _report(*parts, bound)


def im2col_volume_parallel(layer, prec, machine):
    """Each processor owns an (m, k, n)/P^(1/3) cube of the expanded product
    and receives its three faces minus its share of the original arrays."""
    P = machine.processors
    s = derive_sizes(layer, prec)
    m, k, n = _gemm_dims(layer)
    face = 1 / floor_root(Fraction(P) ** 2, 3)
    parts = [max(Fraction(0), p * a * b * face - p * Fraction(size, P)) for p, (a, b), size in
             zip(prec.as_tuple(), ((m, k), (k, n), (m, n)), (s.size_in, s.size_f, s.size_out))]
    return _report(*parts, parallel_lower_bound(layer, prec, machine).bound)


def naive_volume_parallel(layer, prec, machine):
    """The naive serial schedule's traffic spread evenly over P processors."""
    r = naive_volume_serial(layer, prec)
    P = machine.processors
    return _report(r.words_in / P, r.words_f / P, r.words_out / P,
                   parallel_lower_bound(layer, prec, machine).bound)


@dataclass(frozen=True)
class SweepRow:
    param: int
    bound: Fraction = None
    naive: Fraction = None
    blocking: Fraction = None
    im2col: Fraction = None
    note: str = ""

    def ratio(self, value):
        if value is None or self.bound is None or self.bound <= 0:
            return None
        return float(value / self.bound)

    def cells(self):
        nums = (self.bound, self.naive, self.blocking, self.im2col)
        ratios = tuple(self.ratio(v) for v in nums[1:])
        out = [str(self.param)]
        out += ["" if v is None else fmt6(v) for v in nums + ratios]
        out.append(self.note)
        return out


def geometric_range(start, stop, factor):
    """start, start*factor, ... up to and including stop (integers)."""
    if factor <= 1:
        raise ValueError("factor must be > 1")
    if start < 1 or stop < start:
        raise ValueError("empty range: need 1 <= from <= to")
    out, v = [], start
    while v <= stop:
        out.append(v)
        v = v * factor
    return out


def _serial_point(layer, prec, M):
    machine = SerialMachine(M)
    notes = []
    row = {"bound": serial_lower_bound(layer, prec, machine).bound,
           "naive": naive_volume_serial(layer, prec).total,
           "im2col": im2col_volume_serial(layer, prec, machine).total}
    try:
        res = serial_lp_tiles(layer, prec, machine)
        if res.degenerate:
            notes.append("degenerate tiling")
        row["blocking"] = blocking_volume_serial(layer, prec, res.tiling, machine).total
    except TilingInfeasible as e:
        notes.append(str(e))
    return SweepRow(M, note="; ".join(notes), **row)


def _parallel_point(layer, prec, P, M):
    machine = ParallelMachine(P, M)
    notes = []
    row = {"bound": parallel_lower_bound(layer, prec, machine).bound,
           "naive": naive_volume_parallel(layer, prec, machine).total,
           "im2col": im2col_volume_parallel(layer, prec, machine).total}
    try:
        res = parallel_lp_tiles(layer, prec, machine)
        row["blocking"] = blocking_volume_parallel(layer, prec, res.tiling, machine).total
    except TilingInfeasible as e:
        notes.append(str(e))
    return SweepRow(P, note="; ".join(notes), **row)


def sweep(layer, prec, values, kind="m", mem_words=None, workers=1):
    """One SweepRow per machine point, in input order.

    ``kind`` is "m" (values are cache sizes) or "p" (values are processor
    counts; ``mem_words`` per processor is then required). Points are
    independent, so ``workers > 1`` evaluates them on a thread pool.
    """
    values = list(values)
    if not values:
        raise ValueError("empty sweep range")
    if kind == "m":
        point = lambda v: _serial_point(layer, prec, v)
    elif kind == "p":
        if mem_words is None:
            raise ValueError("a processor sweep needs the per-processor memory size")
        point = lambda v: _parallel_point(layer, prec, v, mem_words)
    else:
        raise ValueError(f"unknown sweep kind {kind!r} (use 'm' or 'p')")

    def safe(v):
        try:
            return point(v)
        except (ValueError, ArithmeticError) as e:
            return SweepRow(v, note=str(e))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(safe, values))
    return [safe(v) for v in values]


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()
