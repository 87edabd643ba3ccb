"""Deterministic elementary functions.

IEEE-754 add/sub/mul/div/sqrt are correctly rounded everywhere, so they can be
used directly. Transcendentals are not: libm results differ across platforms
and library versions, which is enough to break bit-level reproducibility. The
engine therefore owns exp/log (and the sin/cos used by image warps) as fixed
float64 algorithms built only from the deterministic primitives, with a single
final rounding to the caller's dtype.

Accuracy targets (verified by tests against mpmath):
  exp, log : <= 2 ulp of the correctly rounded float32 result
  sin, cos : absolute error below 1e-13 on float64 (warp-path only)
All routines are pure elementwise numpy expressions in a fixed evaluation
order; no fused multiply-add, no reassociation, no libm calls.
"""

import numpy as np

_F32 = np.dtype(np.float32)
_F64 = np.dtype(np.float64)

# exp: x = n*ln2 + r with |r| <= ln2/2, exp(x) = 2^n * P(r).
# ln2 split (Cephes): the high part has zeroed low bits so n*hi is exact.
_LOG2E = 1.4426950408889634074
_LN2_HI = 6.93145751953125e-1
_LN2_LO = 1.42860682030941723212e-6

# Taylor coefficients 1/k! for k = 13 .. 0, Horner order. Degree 13 keeps the
# truncation error near 4e-18 on |r| <= 0.3466, far below float32 resolution.
_EXP_COEF = [
    1.6059043836821613e-10,  # 1/13!
    2.08767569878681e-09,    # 1/12!
    2.505210838544172e-08,   # 1/11!
    2.7557319223985893e-07,  # 1/10!
    2.755731922398589e-06,   # 1/9!
    2.48015873015873e-05,    # 1/8!
    1.984126984126984e-04,   # 1/7!
    1.388888888888889e-03,   # 1/6!
    8.333333333333333e-03,   # 1/5!
    4.1666666666666664e-02,  # 1/4!
    1.6666666666666666e-01,  # 1/3!
    5.0e-01,                 # 1/2!
    1.0,
    1.0,
]

# log: x = m * 2^e with m in [sqrt(1/2), sqrt(2)), ln m via the atanh series
# in z = (m-1)/(m+1), odd powers through z^19.
_SQRT_HALF = 0.7071067811865476
_LOG_COEF = [  # 2/19, 2/17, ..., 2/3, 2  (Horner in z*z)
    2.0 / 19.0,
    2.0 / 17.0,
    2.0 / 15.0,
    2.0 / 13.0,
    2.0 / 11.0,
    2.0 / 9.0,
    2.0 / 7.0,
    2.0 / 5.0,
    2.0 / 3.0,
    2.0,
]

# sin/cos: quadrant reduction by pi/2 (split constant, exact for small k),
# then Taylor polynomials on |r| <= pi/4. Used only by augmentation warps,
# where arguments stay within a few turns.
_TWO_OVER_PI = 0.6366197723675814
_PIO2_HI = 1.57079632673412561417e0
_PIO2_LO = 6.07710050650619224932e-11

_SIN_COEF = [  # 1/13!, -1/11!, ..., -1/3!, 1  (odd series, Horner in r*r)
    1.6059043836821613e-10,
    -2.505210838544172e-08,
    2.755731922398589e-06,
    -1.984126984126984e-04,
    8.333333333333333e-03,
    -1.6666666666666666e-01,
    1.0,
]
_COS_COEF = [  # -1/14!, 1/12!, ..., -1/2!, 1  (even series, Horner in r*r)
    -1.1470745597729725e-11,
    2.08767569878681e-09,
    -2.7557319223985893e-07,
    2.48015873015873e-05,
    -1.388888888888889e-03,
    4.1666666666666664e-02,
    -5.0e-01,
    1.0,
]


def _check(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype == _F32 or x.dtype == _F64:
        return x
    if x.dtype.kind in "iub":
        return x.astype(_F64)
    raise TypeError(f"expected float32/float64 input, got dtype {x.dtype}")


def _horner(r: np.ndarray, coef) -> np.ndarray:
    acc = np.full_like(r, coef[0])
    for c in coef[1:]:
        acc = acc * r + c
    return acc


def _exp64(x: np.ndarray) -> np.ndarray:
    # Clamp keeps the range reduction finite; 2^n then saturates naturally.
    nan = np.isnan(x)
    safe = np.where(nan, 0.0, np.clip(x, -800.0, 800.0))
    n = np.rint(safe * _LOG2E)
    r = (safe - n * _LN2_HI) - n * _LN2_LO
    y = np.ldexp(_horner(r, _EXP_COEF), n.astype(np.int64))
    y = np.where(x == np.inf, np.inf, y)
    y = np.where(x == -np.inf, 0.0, y)
    return np.where(nan, np.nan, y)


def _log64(x: np.ndarray) -> np.ndarray:
    pos = np.isfinite(x) & (x > 0.0)
    m, e = np.frexp(np.where(pos, x, 1.0))
    low = m < _SQRT_HALF
    m = np.where(low, m * 2.0, m)
    e = np.where(low, e - 1, e).astype(np.float64)
    z = (m - 1.0) / (m + 1.0)
    lnm = z * _horner(z * z, _LOG_COEF)
    y = e * _LN2_HI + (lnm + e * _LN2_LO)
    y = np.where(x == np.inf, np.inf, y)
    y = np.where(x == 0.0, -np.inf, y)
    return np.where(np.isnan(x) | (x < 0.0), np.nan, y)


def _sincos64(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = np.rint(x * _TWO_OVER_PI)
    r = (x - k * _PIO2_HI) - k * _PIO2_LO
    r2 = r * r
    s = r * _horner(r2, _SIN_COEF)
    c = _horner(r2, _COS_COEF)
    q = k.astype(np.int64) & 3
    sin = np.where(q == 0, s, np.where(q == 1, c, np.where(q == 2, -s, -c)))
    cos = np.where(q == 0, c, np.where(q == 1, -s, np.where(q == 2, -c, s)))
    return sin, cos


def _apply(x, core) -> np.ndarray:
    x = _check(x)
    # Saturation to inf/0 on extreme inputs is the documented behaviour, not
    # an accident worth warning about.
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        y = core(x.astype(_F64))
        return y.astype(x.dtype) if x.dtype == _F32 else y


def exp(x) -> np.ndarray:
    """Elementwise exp, deterministic across platforms and thread counts."""
    return _apply(x, _exp64)


def log(x) -> np.ndarray:
    """Elementwise natural log. log(0) = -inf, log(x<0) = nan."""
    return _apply(x, _log64)


def sigmoid(x) -> np.ndarray:
    """1 / (1 + exp(-x)), evaluated in float64, one rounding to the out dtype.

    Saturates cleanly: sigmoid(-large) == 0.0, sigmoid(+large) == 1.0.
    """
    return _apply(x, lambda z: 1.0 / (1.0 + _exp64(-z)))


def sin(x) -> np.ndarray:
    """Elementwise sine (warp-path accuracy, see module docstring)."""
    return _apply(x, lambda z: _sincos64(z)[0])


def cos(x) -> np.ndarray:
    """Elementwise cosine (warp-path accuracy, see module docstring)."""
    return _apply(x, lambda z: _sincos64(z)[1])


def sqrt(x) -> np.ndarray:
    """Elementwise square root. IEEE-754 sqrt is correctly rounded, so the
    hardware instruction is already bit-deterministic; no replacement needed.
    """
    x = _check(x)
    return np.sqrt(x)
