"""Brute-force traffic oracle.

``simulate_serial`` replays every update of a tiled loop nest against a
fully associative, word-accurate LRU cache (write-allocate, write-back,
outputs allocated on first write with no fill read). It is meant for toy
layers only, hence the update cap.
"""

from collections import OrderedDict
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
import math

from .model import derive_sizes, input_span
from .tiler import LOOP_ORDER, SERIAL_FIELDS, serial_extents

DEFAULT_UPDATE_CAP = 10**7
DEFAULT_ORDER = LOOP_ORDER


class SimulationTooLarge(ValueError):
    pass


class FootprintTooLarge(ValueError):
    def __init__(self, coords, words, M):
        super().__init__(f"processor {coords} needs {float(words):.6g} words > M = {M}")
        self.coords = coords


@dataclass(frozen=True)
class CacheModel:
    capacity_words: int


@dataclass(frozen=True)
class SimResult:
    loads_words: Fraction
    stores_words: Fraction
    total_words: Fraction
    peak_resident_words: Fraction
    updates_executed: int


def _blocks(n, b):
    return [(s, min(s + b, n)) for s in range(0, n, b)]


def simulate_serial(layer, prec, tiling, cache, order=DEFAULT_ORDER, update_cap=DEFAULT_UPDATE_CAP,
                    trace=None):
    """Count words moved by the tiled nest; ``trace`` gets one line per miss."""
    s = derive_sizes(layer, prec)
    if s.g_total > update_cap:
        raise SimulationTooLarge(f"G = {s.g_total} exceeds the simulator cap of {update_cap}")
    if sorted(order) != sorted(SERIAL_FIELDS):
        raise ValueError("order must be a permutation of the serial block names")
    scale = math.lcm(prec.p_in.denominator, prec.p_f.denominator, prec.p_out.denominator)
    w_in, w_f, w_out = (int(p * scale) for p in prec.as_tuple())
    cap = cache.capacity_words * scale
    if cap < w_in + w_f + w_out:
        raise ValueError(f"cache of {cache.capacity_words} words cannot hold one update "
                         f"({float(prec.p_total):.6g} words)")

    L = layer
    sw, sh = L.stride_w, L.stride_h
    W = sw * (L.w_out - 1) + L.w_f
    H = sh * (L.h_out - 1) + L.h_f
    ext = serial_extents(L)
    blk = {k: getattr(tiling, k) for k in SERIAL_FIELDS}
    pos = {k: i for i, k in enumerate(order)}
    tile_ranges = [_blocks(ext[k], blk[k]) for k in order]

    lru = OrderedDict()
    seen_out = set()
    loads = stores = resident = peak = 0
    updates = 0
    width = (w_in, w_f, w_out)
    names = ("Input", "Filter", "Output")

    def decode(key):
        kind, idx = key % 3, key // 3
        if kind == 0:
            y, idx = idx % H, idx // H
            x, idx = idx % W, idx // W
            return names[0], (idx // L.c_in, idx % L.c_in, x, y)
        if kind == 1:
            i7, idx = idx % L.h_f, idx // L.h_f
            i6, idx = idx % L.w_f, idx // L.w_f
            return names[1], (idx // L.c_out, idx % L.c_out, i6, i7)
        ho, idx = idx % L.h_out, idx // L.h_out
        wo, idx = idx % L.w_out, idx // L.w_out
        return names[2], (idx // L.c_out, idx % L.c_out, wo, ho)

    def touch(key, kind):
        nonlocal loads, stores, resident, peak
        if key in lru:
            lru.move_to_end(key)
            return
        w = width[kind]
        while resident + w > cap:
            old, _ = lru.popitem(last=False)
            ow = width[old % 3]
            resident -= ow
            if old % 3 == 2:
                stores += ow
        if kind != 2 or key in seen_out:
            loads += w
            if trace is not None:
                arr, idx = decode(key)
                trace.write(f"{arr} {idx} {Fraction(w, scale)}\n")
        if kind == 2:
            seen_out.add(key)
        lru[key] = None
        resident += w
        if resident > peak:
            peak = resident

    cI, cO, wO, hO, wF, hF = L.c_in, L.c_out, L.w_out, L.h_out, L.w_f, L.h_f
    for tile in product(*tile_ranges):
        ranges = [range(a, b) for a, b in tile]
        for it in product(*ranges):
            n = it[pos["b_N"]]
            ci = it[pos["b_cI"]]
            co = it[pos["b_cO"]]
            wo = it[pos["b_wO"]]
            ho = it[pos["b_hO"]]
            i6 = sw * it[pos["b_wFq"]] + it[pos["b_wFr"]]
            i7 = sh * it[pos["b_hFq"]] + it[pos["b_hFr"]]
            if i6 >= wF or i7 >= hF:
                continue
            touch((((n * cI + ci) * W + sw * wo + i6) * H + sh * ho + i7) * 3, 0)
            touch((((ci * cO + co) * wF + i6) * hF + i7) * 3 + 1, 1)
            touch((((n * cO + co) * wO + wo) * hO + ho) * 3 + 2, 2)
            updates += 1
    for key in lru:
        if key % 3 == 2:
            stores += w_out
    return SimResult(Fraction(loads, scale), Fraction(stores, scale),
                     Fraction(loads + stores, scale), Fraction(peak, scale), updates)


@dataclass(frozen=True)
class ParallelSimResult:
    max_received: Fraction
    min_received: Fraction
    mean_received: Fraction
    processors_used: int
    max_updates: int


def _segments(n, a):
    """(length, count, coordinate of a representative) for the segments of a loop."""
    full, rest = divmod(n, a)
    out = []
    if full:
        out.append((a, full, 0))
    if rest:
        out.append((rest, 1, full))
    return out


def simulate_parallel_footprints(layer, prec, tiling, machine):
    """Exact per-processor footprints and words each processor must receive.

    Every processor owns a box of the 7-loop iteration space; its footprint in
    each array is counted exactly (input halos included) and it is credited
    with an even 1/P share of every array.
    """
    L = layer
    s = derive_sizes(L, prec)
    P, M = machine.processors, machine.mem_words_per_proc
    a = tiling.as_tuple()
    used = math.prod(-(-n // x) for n, x in zip(L.extents, a))
    if used > P:
        raise ValueError(f"tiling needs {used} processors, only {P} available")
    shares = (prec.p_in * s.size_in / P, prec.p_f * s.size_f / P, prec.p_out * s.size_out / P)
    worst = best = None
    weighted = Fraction(0)
    max_updates = 0
    for combo in product(*(_segments(n, x) for n, x in zip(L.extents, a))):
        ln = [c[0] for c in combo]
        count = math.prod(c[1] for c in combo)
        nN, ncI, ncO, nwO, nhO, nwF, nhF = ln
        fp_in = nN * ncI * input_span(nwO, nwF, L.stride_w) * input_span(nhO, nhF, L.stride_h)
        fp_f = ncI * ncO * nwF * nhF
        fp_out = nN * ncO * nwO * nhO
        words = prec.p_in * fp_in + prec.p_f * fp_f + prec.p_out * fp_out
        if words > M:
            raise FootprintTooLarge(tuple(c[2] for c in combo), words, M)
        recv = sum(max(Fraction(0), p * fp - sh) for p, fp, sh in
                   zip(prec.as_tuple(), (fp_in, fp_f, fp_out), shares))
        worst = recv if worst is None else max(worst, recv)
        best = recv if best is None else min(best, recv)
        weighted += recv * count
        max_updates = max(max_updates, math.prod(ln))
    return ParallelSimResult(worst, best, weighted / used, used, max_updates)
