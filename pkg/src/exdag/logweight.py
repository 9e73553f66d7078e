"""Log-domain weight arithmetic.

Subexpression weights (tree-expansion operator counts) grow exponentially in
the worst case, so they are kept as base-2 logarithms from the start.  Every
function here returns an *upper bound* on the true logarithm: overestimating
a weight can only tighten the accuracy demanded from a child, never loosen
it, so upper bounds are the safe direction throughout the package.
"""

import math

import gmpy2

__all__ = [
    "LOG_ZERO",
    "SMALL_GAP",
    "LINEAR_GAP",
    "log_add",
    "log2_up",
    "log2_down",
    "ceil_log2",
]

LOG_ZERO = float("-inf")  # log-domain encoding of weight 0

_INF = float("inf")
_LN2_DOWN = math.nextafter(math.log(2.0), 0.0)  # guaranteed < ln 2

# Regime thresholds for log_add.  Gaps up to SMALL_GAP just return a+1
# (log2(1+r) <= 1 whenever r <= 1, and 2^-0.53 is where finer bounds start
# paying off).  Beyond LINEAR_GAP, squaring 1+r is numerically pointless and
# the tangent-line bound r/ln2 is used instead.
SMALL_GAP = 0.53
LINEAR_GAP = 16.0

_SQUARING_BITS = 64


def _pow_table() -> list:
    """Upper bounds of 2**(2**-i) for i = 1..64, each padded by one ulp."""
    ctx = gmpy2.context(precision=53, round=gmpy2.RoundUp)
    table = [0.0]  # index 0 unused
    for i in range(1, _SQUARING_BITS + 1):
        v = float(ctx.exp2(gmpy2.mpfr(2.0) ** -i))
        table.append(math.nextafter(v, _INF))
    return table


_POW2_UP = _pow_table()


def _up(x: float) -> float:
    return math.nextafter(x, _INF)


def log2_up(v: float) -> float:
    """An upper bound on log2(v) for v > 0 (two-ulp pad over libm)."""
    if v <= 0.0:
        return LOG_ZERO if v == 0.0 else math.nan
    m = math.log2(v)
    return math.nextafter(math.nextafter(m, _INF), _INF)


def log2_down(v: float) -> float:
    """A lower bound on log2(v) for v > 0."""
    if v <= 0.0:
        return LOG_ZERO if v == 0.0 else math.nan
    m = math.log2(v)
    return math.nextafter(math.nextafter(m, -_INF), -_INF)


def ceil_log2(v: float) -> int:
    """Exact ceil(log2(v)) for finite v > 0, via the binary exponent."""
    m, e = math.frexp(v)  # v = m * 2**e, m in [0.5, 1)
    return e - 1 if m == 0.5 else e


def _pow2_frac_up(s: float) -> float:
    """Upper bound of 2**s for s in (0, 1], as a product of table factors.

    The binary digits of s select factors 2**(2**-i); one extra factor for
    i = 64 absorbs the truncation of digits beyond the table.
    """
    if s == 1.0:
        return 2.0
    prod = 1.0
    t = s
    for i in range(1, _SQUARING_BITS + 1):
        t *= 2.0  # exact scaling
        if t >= 1.0:
            t -= 1.0  # exact: t in [1, 2)
            prod = _up(prod * _POW2_UP[i])
        if t == 0.0:
            return prod
    return _up(prod * _POW2_UP[_SQUARING_BITS])


def _log2_1p_up(r: float) -> float:
    """Upper bound of log2(1 + r) for r in (0, 1] by digit-extracting squaring."""
    x = _up(1.0 + r)
    result = 0.0
    scale = 1.0
    for _ in range(_SQUARING_BITS):
        x = _up(x * x)
        scale *= 0.5
        if x >= 2.0:
            x *= 0.5  # exact
            result += scale
        if x == 1.0:
            return result
    # remaining log2(x) < 2**-64; pad it plus accumulated float slop
    return _up(result + 2.0 ** -_SQUARING_BITS)


def log_add(a: float, b: float) -> float:
    """Upper bound on log2(2**a + 2**b).

    Exact for a == b (returns a+1 == log2 of the true sum) and when one
    side carries weight 0 (the -inf encoding).  Otherwise overshoots by at
    most one in the small-gap regime and by a few ulps elsewhere.
    """
    if a < b:
        a, b = b, a
    if b == LOG_ZERO:
        return a
    if a == _INF:
        return a
    gap = a - b
    if gap <= SMALL_GAP:
        # 2**a + 2**b <= 2**(a+1)
        r = a + 1.0
        return r if r - a >= 1.0 else _up(r)
    if gap <= LINEAR_GAP:
        k = math.floor(gap)
        frac = gap - k
        if frac == 0.0:
            r_up = 2.0 ** -gap  # exact for integer gaps
        else:
            # 2**-gap = 2**-(k+1) * 2**(1-frac)
            s = 1.0 - frac
            if s + frac < 1.0:
                s = _up(s)
            r_up = _up(2.0 ** -(k + 1) * _pow2_frac_up(s))
        return _up(a + _log2_1p_up(r_up))
    # tangent bound: log2(1+r) <= r / ln 2
    r = 2.0 ** (b - a)
    if r == 0.0:
        return _up(a)
    return _up(a + _up(_up(r) / _LN2_DOWN))
