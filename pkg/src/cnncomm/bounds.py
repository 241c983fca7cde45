"""Communication lower bounds for the 7-loop convolution, serial and parallel.

All terms are exact rationals. Square and cube roots are rounded down to
2**-64 relative accuracy, so a reported lower bound is never larger than the
true value of its formula.
"""

from dataclasses import dataclass
from fractions import Fraction

from .exact import floor_root
from .model import derive_sizes, triangle_holds


def cp(prec):
    """Precision constant of the 1/M bound."""
    ok, name = triangle_holds(prec)
    if ok:
        return prec.p_total**2 / 4
    pj = getattr(prec, name)
    return pj * (prec.p_total - pj)


@dataclass(frozen=True)
class SerialBoundReport:
    term_trivial: Fraction
    term_large_filter: Fraction
    term_small_filter: Fraction
    bound: Fraction
    dominating_term: str

    def terms(self):
        return {"trivial": self.term_trivial,
                "large_filter": self.term_large_filter,
                "small_filter": self.term_small_filter}


@dataclass(frozen=True)
class ParallelBoundReport:
    md_large: Fraction
    md_small: Fraction
    mi_cube: Fraction
    mi_small: Fraction
    bound_md: Fraction
    bound_mi: Fraction
    bound: Fraction
    md_trivial: bool
    load_balanced: bool = True


def _small_filter_root(layer, prec, M, P=1):
    """sqrt(pI pF pO sw sh / (wF hF M)) / P, rounded down."""
    q = (prec.p_in * prec.p_f * prec.p_out * layer.stride_w * layer.stride_h
         / (Fraction(layer.w_f * layer.h_f) * M))
    return floor_root(q, 2) / P


def serial_lower_bound(layer, prec, machine):
    """Max of the compulsory, large-filter and small-filter terms.

    The compulsory term counts input elements the loop nest actually reads
    (DerivedSizes.touched_in); the padded closed-form |I| overstates it and
    would let a legal execution beat the "bound".
    """
    M = Fraction(machine.cache_words)
    if M < 1:
        raise ValueError("cache must hold at least one word")
    s = derive_sizes(layer, prec)
    trivial = prec.p_in * s.touched_in + prec.p_f * s.size_f + prec.p_out * s.size_out
    large = cp(prec) * s.g_total / M - M
    small = 2 * s.g_total * _small_filter_root(layer, prec, M) - 2 * M
    terms = {"trivial": trivial, "large_filter": large, "small_filter": small}
    name = max(terms, key=lambda k: terms[k])
    return SerialBoundReport(trivial, large, small, terms[name], name)


def small_filter_dominates(layer, prec, machine):
    """True when the 1/sqrt(M) term's leading part beats the 1/M term's.

    Compares 2 sqrt(pI pF pO sw sh / (wF hF M)) G against Cp G / M exactly,
    i.e. 4 pI pF pO sw sh M > Cp^2 wF hF. For unit precisions this is the
    familiar wF hF < 64 M sw sh / 81.
    """
    M = Fraction(machine.cache_words)
    c = cp(prec)
    lhs = 4 * prec.p_in * prec.p_f * prec.p_out * layer.stride_w * layer.stride_h * M
    return lhs > c**2 * layer.w_f * layer.h_f


def parallel_lower_bound(layer, prec, machine):
    """Per-processor bounds: memory-dependent pair and memory-independent pair.

    The memory-independent terms assume every array starts evenly spread over
    the processors; the report carries that as ``load_balanced``.
    """
    P = Fraction(machine.processors)
    M = Fraction(machine.mem_words_per_proc)
    if P < 1 or M < 1:
        raise ValueError("need P >= 1 and M >= 1")
    s = derive_sizes(layer, prec)
    G = s.g_total
    md_large = cp(prec) * G / (P * M) - M
    md_small = 2 * G * _small_filter_root(layer, prec, M, P) - 2 * M
    ppp = prec.p_in * prec.p_f * prec.p_out
    share = s.a_p / P
    mi_cube = floor_root(ppp**2 * Fraction(G) ** 3 / P**3, 6) - share
    sig = layer.stride_w * layer.stride_h
    mi_small = floor_root(ppp * Fraction(G * sig) ** 2 / (P * layer.w_f * layer.h_f) ** 2, 3) - share
    bound_md = max(Fraction(0), md_large, md_small)
    bound_mi = max(Fraction(0), mi_cube, mi_small)
    return ParallelBoundReport(md_large, md_small, mi_cube, mi_small, bound_md, bound_mi,
                               max(bound_md, bound_mi), md_large <= 0 and md_small <= 0)
