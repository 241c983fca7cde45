"""Exact rational helpers: directed roots, rationalized logarithms, checked ints."""

from decimal import Decimal, localcontext
from fractions import Fraction
import math

INT64_MAX = 2**63 - 1
ROOT_BITS = 64


class SizeOverflowError(OverflowError):
    """A derived size does not fit in a signed 64-bit integer."""

    def __init__(self, field, value):
        super().__init__(f"{field} = {value} exceeds the 64-bit size limit")
        self.field = field
        self.value = value


def checked(field, value):
    if value > INT64_MAX:
        raise SizeOverflowError(field, value)
    return value


def as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, float):
        # Floats only reach here from user code; keep the exact binary value.
        return Fraction(x)
    return Fraction(x)


def iroot(n, k):
    """Largest integer r with r**k <= n."""
    if n < 0:
        raise ValueError("iroot of a negative number")
    if n < 2:
        return n
    if k == 2:
        return math.isqrt(n)
    r = 1 << ((n.bit_length() + k - 1) // k)
    while True:
        s = ((k - 1) * r + n // r ** (k - 1)) // k
        if s >= r:
            break
        r = s
    while r**k > n:
        r -= 1
    while (r + 1) ** k <= n:
        r += 1
    return r


def floor_root(q, k, bits=ROOT_BITS):
    """Rational r <= q**(1/k) with relative error below 2**-bits (q >= 0)."""
    q = as_fraction(q)
    if q < 0:
        raise ValueError("root of a negative rational")
    if q == 0:
        return Fraction(0)
    a, b = q.numerator, q.denominator
    scale = 1 << bits
    return Fraction(iroot(a * b ** (k - 1) * scale**k, k), b * scale)


def rational_log(x, base, bits=ROOT_BITS):
    """log_base(x) rounded to the nearest multiple of 2**-bits."""
    x, base = as_fraction(x), as_fraction(base)
    if x <= 0 or base <= 0 or base == 1:
        raise ValueError("log needs positive arguments and base != 1")
    with localcontext() as ctx:
        ctx.prec = 50
        lx = (Decimal(x.numerator) / Decimal(x.denominator)).ln()
        lb = (Decimal(base.numerator) / Decimal(base.denominator)).ln()
        v = lx / lb * (1 << bits)
        return Fraction(int(v.to_integral_value()), 1 << bits)


def fmt6(x):
    """Decimal rendering with 6 significant digits."""
    return f"{float(x):.6g}"
