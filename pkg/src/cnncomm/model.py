"""Convolution-layer shapes, precisions, machine models and the layer file format."""

from dataclasses import dataclass, fields
from fractions import Fraction

from .exact import as_fraction, checked

LAYER_KEYS = ("N", "c_in", "c_out", "w_out", "h_out", "w_f", "h_f", "stride_w", "stride_h")
PRECISION_KEYS = ("p_in", "p_f", "p_out")


class LayerFileError(ValueError):
    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class ConvLayer:
    """Loop extents of the seven-loop direct convolution plus its strides."""

    N: int
    c_in: int
    c_out: int
    w_out: int
    h_out: int
    w_f: int
    h_f: int
    stride_w: int = 1
    stride_h: int = 1

    @property
    def extents(self):
        return (self.N, self.c_in, self.c_out, self.w_out, self.h_out, self.w_f, self.h_f)


@dataclass(frozen=True)
class PrecisionTriple:
    """Words (32-bit) per element of Input, Filter and Output."""

    p_in: Fraction = Fraction(1)
    p_f: Fraction = Fraction(1)
    p_out: Fraction = Fraction(1)

    def __post_init__(self):
        for f in fields(self):
            v = as_fraction(getattr(self, f.name))
            if v <= 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
            object.__setattr__(self, f.name, v)

    @property
    def p_total(self):
        return self.p_in + self.p_f + self.p_out

    def scaled(self, c):
        c = as_fraction(c)
        return PrecisionTriple(self.p_in * c, self.p_f * c, self.p_out * c)

    def as_tuple(self):
        return (self.p_in, self.p_f, self.p_out)


@dataclass(frozen=True)
class DerivedSizes:
    size_in: int
    size_f: int
    size_out: int
    g_total: int
    a_p: Fraction
    # Input elements the loop nest actually reads; smaller than size_in,
    # whose closed form pads each spatial axis by one stride.
    touched_in: int


@dataclass(frozen=True)
class SerialMachine:
    cache_words: int


@dataclass(frozen=True)
class ParallelMachine:
    processors: int
    mem_words_per_proc: int


@dataclass(frozen=True)
class TwoBufferMachine:
    """Scratchpad (input + filter) and accumulator (output) buffers."""

    scratchpad_words: int = 256 * 1024
    accumulator_entries: int = 16 * 1024
    double_buffered: bool = True

    @property
    def usable_scratchpad(self):
        return self.scratchpad_words // 2 if self.double_buffered else self.scratchpad_words

    @property
    def usable_accumulator(self):
        return self.accumulator_entries // 2 if self.double_buffered else self.accumulator_entries


def validate_layer(layer):
    """Return the list of violated shape assumptions (empty when valid)."""
    problems = []
    for f in fields(layer):
        v = getattr(layer, f.name)
        if not isinstance(v, int) or v < 1:
            problems.append(f"{f.name} >= 1")
    if problems:
        return problems
    L = layer
    if L.stride_w > L.w_f:
        problems.append("stride_w <= w_f")
    if L.stride_h > L.h_f:
        problems.append("stride_h <= h_f")
    if L.w_f > L.stride_w * L.w_out:
        problems.append("w_f <= stride_w*w_out")
    if L.h_f > L.stride_h * L.h_out:
        problems.append("h_f <= stride_h*h_out")
    return problems


def derive_sizes(layer, prec):
    L = layer
    size_in = checked("size_in", L.N * L.c_in * (L.stride_w * L.w_out + L.w_f)
                      * (L.stride_h * L.h_out + L.h_f))
    size_f = checked("size_f", L.c_in * L.c_out * L.w_f * L.h_f)
    size_out = checked("size_out", L.N * L.c_out * L.w_out * L.h_out)
    g = checked("g_total", L.N * L.c_in * L.c_out * L.w_out * L.h_out * L.w_f * L.h_f)
    touched = checked("touched_in", L.N * L.c_in * input_span(L.w_out, L.w_f, L.stride_w)
                      * input_span(L.h_out, L.h_f, L.stride_h))
    a_p = max(prec.p_in * size_in, prec.p_f * size_f, prec.p_out * size_out)
    return DerivedSizes(size_in, size_f, size_out, g, a_p, touched)


def input_span(n_out, n_f, stride):
    """Distinct values of stride*i + j for i < n_out, j < n_f."""
    if n_f >= stride:
        return stride * (n_out - 1) + n_f
    return n_out * n_f


def compulsory_words(layer, prec):
    """Every touched input/filter word read once, every output word written once."""
    s = derive_sizes(layer, prec)
    return prec.p_in * s.touched_in + prec.p_f * s.size_f + prec.p_out * s.size_out


def triangle_holds(prec):
    """(True, None) or (False, name of the precision exceeding the other two)."""
    p = {"p_in": prec.p_in, "p_f": prec.p_f, "p_out": prec.p_out}
    total = prec.p_total
    for name, v in p.items():
        if v > total - v:
            return False, name
    return True, None


def _parse_int(key, text, line):
    try:
        v = int(text)
    except ValueError:
        raise LayerFileError(f"{key} must be an integer, got {text!r}", line) from None
    return v


def parse_kv(text, allowed):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise LayerFileError(f"expected 'key = value', got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in allowed:
            raise LayerFileError(f"unknown key {key!r}", lineno)
        if key in out:
            raise LayerFileError(f"duplicate key {key!r}", lineno)
        out[key] = (value, lineno)
    return out


def parse_layer(text):
    """Parse a layer file; precisions default to one word each."""
    kv = parse_kv(text, LAYER_KEYS + PRECISION_KEYS)
    ints = {k: _parse_int(k, *kv[k]) for k in LAYER_KEYS if k in kv}
    missing = [k for k in LAYER_KEYS if k not in kv]
    if missing:
        raise LayerFileError(f"missing keys: {', '.join(missing)}")
    layer = ConvLayer(**ints)
    precs = {}
    for k in PRECISION_KEYS:
        if k in kv:
            value, line = kv[k]
            try:
                precs[k] = Fraction(value)
            except (ValueError, ZeroDivisionError):
                raise LayerFileError(f"{k} must be an integer or a/b, got {value!r}", line) from None
            if precs[k] <= 0:
                raise LayerFileError(f"{k} must be positive", line)
    return layer, PrecisionTriple(**precs)


def load_layer(path):
    with open(path, encoding="utf-8") as fh:
        return parse_layer(fh.read())


def format_layer(layer, prec=None):
    lines = [f"{k} = {getattr(layer, k)}" for k in LAYER_KEYS]
    if prec is not None:
        lines += [f"{k} = {getattr(prec, k)}" for k in PRECISION_KEYS]
    return "\n".join(lines) + "\n"
