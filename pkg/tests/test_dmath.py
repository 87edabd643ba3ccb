"""Accuracy and determinism of the engine-owned transcendentals, measured
against mpmath at 50 decimal digits."""

import mpmath
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from detcnn import dmath

mpmath.mp.dps = 50


def _ulp_err(got32, ref_mp):
    """Error of a float32 result in units of its own last place."""
    ref = float(ref_mp)
    if ref == 0.0:
        return abs(float(got32))
    ulp = np.spacing(np.float32(abs(ref))) or np.spacing(np.float32(0))
    return abs(float(got32) - ref) / float(ulp)


def _grid(lo, hi, n=4001):
    return np.linspace(lo, hi, n, dtype=np.float32)


def test_exp_within_two_ulp_on_wide_grid():
    xs = _grid(-87.0, 88.0)
    got = dmath.exp(xs)
    worst = 0.0
    for x, g in zip(xs, got):
        worst = max(worst, _ulp_err(g, mpmath.exp(mpmath.mpf(float(x)))))
    assert worst <= 2.0, f"exp worst error {worst} ulp"


def test_exp_small_arguments_exact_region():
    xs = _grid(-1.0, 1.0, 2001)
    got = dmath.exp(xs)
    for x, g in zip(xs, got):
        assert _ulp_err(g, mpmath.exp(mpmath.mpf(float(x)))) <= 2.0


def test_exp_specials():
    xs = np.array([np.inf, -np.inf, np.nan, 120.0, -120.0],
                  dtype=np.float32)
    got = dmath.exp(xs)
    assert got[0] == np.inf
    assert got[1] == 0.0
    assert np.isnan(got[2])
    assert got[3] == np.inf  # saturates past the f32 range
    assert got[4] == 0.0


def test_log_within_two_ulp():
    xs = np.concatenate([
        _grid(1e-6, 2.0, 2001),
        _grid(2.0, 1e6, 2001),
    ])
    got = dmath.log(xs)
    worst = 0.0
    for x, g in zip(xs, got):
        worst = max(worst, _ulp_err(g, mpmath.log(mpmath.mpf(float(x)))))
    assert worst <= 2.0, f"log worst error {worst} ulp"


def test_log_specials():
    xs = np.array([0.0, -1.0, np.inf, np.nan], dtype=np.float32)
    got = dmath.log(xs)
    assert got[0] == -np.inf
    assert np.isnan(got[1])
    assert got[2] == np.inf
    assert np.isnan(got[3])


def test_sigmoid_matches_reference_and_saturates():
    xs = _grid(-30.0, 30.0, 2001)
    got = dmath.sigmoid(xs)
    for x, g in zip(xs, got):
        ref = 1 / (1 + mpmath.exp(-mpmath.mpf(float(x))))
        assert abs(float(g) - float(ref)) <= 4 * float(
            np.spacing(np.float32(max(abs(float(ref)), 1e-30)))
        )
    hi = dmath.sigmoid(np.array([200.0], dtype=np.float32))
    lo = dmath.sigmoid(np.array([-200.0], dtype=np.float32))
    assert hi[0] == 1.0
    assert lo[0] == 0.0


def test_sin_cos_accuracy_moderate_range():
    xs = _grid(-8.0, 8.0, 4001)
    s = dmath.sin(xs)
    c = dmath.cos(xs)
    for x, sv, cv in zip(xs, s, c):
        assert abs(float(sv) - float(mpmath.sin(mpmath.mpf(float(x))))) < 1e-6
        assert abs(float(cv) - float(mpmath.cos(mpmath.mpf(float(x))))) < 1e-6


def test_sin_cos_pythagorean_identity():
    xs = _grid(-8.0, 8.0, 1001)
    s = dmath.sin(xs).astype(np.float64)
    c = dmath.cos(xs).astype(np.float64)
    assert np.max(np.abs(s * s + c * c - 1.0)) < 1e-6


@given(st.floats(min_value=-80.0, max_value=80.0, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_exp_replay_is_bitwise(x):
    xs = np.array([x], dtype=np.float32)
    a = dmath.exp(xs)
    b = dmath.exp(xs)
    assert a.tobytes() == b.tobytes()


def test_vector_equals_elementwise():
    xs = _grid(-20.0, 20.0, 257)
    whole = dmath.exp(xs)
    one_by_one = np.array(
        [dmath.exp(np.array([v], dtype=np.float32))[0] for v in xs],
        dtype=np.float32,
    )
    assert whole.tobytes() == one_by_one.tobytes()
