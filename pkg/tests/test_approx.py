import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import chebyshev as cheb

from hefedrnn.approx import (
    ClipSpec,
    ExactFunction,
    PolyApprox,
    RangeGuard,
    _alternating_extrema,
    activation_library,
    clip_poly,
    clip_reference,
    error_profile,
    eval_encrypted,
    fit,
    load_poly,
    save_poly,
    sigmoid,
    soft_clip,
    tanh_clip,
)
from hefedrnn.engine import Engine, EngineParams
from hefedrnn.exceptions import LevelError
from hefedrnn.packing import make_layout, pack, unpack


def test_reference_functions():
    assert clip_reference(7, 5) == 5
    assert clip_reference(-7, 5) == -5
    assert clip_reference(2, 5) == 2
    assert soft_clip(0.0, 5) == 0.0
    assert soft_clip(0.0, 0.3) == 0.0
    # m*tanh(x/m) = x - x^3/(3 m^2) + ...
    assert tanh_clip(0.001, 5) == pytest.approx(0.001 - 0.001**3 / 75, rel=1e-12)
    assert sigmoid(0.0) == 0.5


def test_clipspec_validation():
    with pytest.raises(ValueError):
        ClipSpec(0.0)
    with pytest.raises(ValueError):
        ClipSpec(5.0, "weird")
    assert ClipSpec(5.0, "hard")(np.array([9.0]))[0] == 5.0


def test_fit_polynomial_target_is_exact():
    p = fit(lambda x: x, (-1, 1), 1)
    assert p.max_error < 1e-12
    np.testing.assert_allclose(p.to_monomial(), [0, 1], atol=1e-12)
    q = fit(lambda x: 3 * x**3 - x + 2, (-2, 3), 3, "least-squares")
    xs = np.linspace(-2, 3, 11)
    np.testing.assert_allclose(q(xs), 3 * xs**3 - xs + 2, atol=1e-9)


def test_fit_validation():
    with pytest.raises(ValueError):
        fit(np.tanh, (1, -1), 3)
    with pytest.raises(ValueError):
        fit(np.tanh, (-1, 1), 0)
    with pytest.raises(ValueError):
        fit(np.tanh, (-1, 1), 3, "spline")


@pytest.mark.parametrize(
    "variant,degree,expected",
    [("tanh", 5, 0.643), ("soft", 5, 0.706), ("tanh", 15, 0.183), ("soft", 15, 0.089)],
)
def test_clip_mean_abs_error_against_hard_clip(variant, degree, expected):
    p = fit(ClipSpec(5.0, variant), (-30, 30), degree)
    xs = np.linspace(-30, 30, 60001)
    mae = float(np.mean(np.abs(p(xs) - clip_reference(xs, 5.0))))
    assert mae == pytest.approx(expected, rel=0.10)


def test_tanh_degree7_error_floor():
    """Degree 7 on [-4, 4] cannot reach 0.01: the fit equioscillates, so the
    smallest alternation magnitude is a lower bound for every degree-7 polynomial."""
    p, dp = activation_library("tanh", 7)
    xs, ref, val, err = error_profile(p, np.tanh, n=200001)
    ext = _alternating_extrema(err)
    assert len(ext) >= 9
    lower = float(np.min(np.abs(err[ext])))
    assert lower > 0.03
    assert p.max_error == pytest.approx(0.0377846, rel=1e-4)
    assert dp.degree == 6


def test_activation_library_names():
    for name in ("tanh", "sigmoid", "softplus"):
        p, dp = activation_library(name, 7)
        assert p.degree == 7 and p.depth == 3
    with pytest.raises(ValueError):
        activation_library("relu")
    assert 1.0 - np.tanh(0.0) ** 2 == 1.0


def test_sigmoid_fit_is_odd_about_half():
    p, _ = activation_library("sigmoid", 7)
    xs = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(p(xs) + p(-xs), 1.0, atol=1e-12)


def test_minimax_equioscillates():
    p = fit(lambda x: soft_clip(x, 5.0), (-60, 60), 7)
    _, _, _, err = error_profile(p, lambda x: soft_clip(x, 5.0), n=200001)
    ext = _alternating_extrema(err)
    mags = np.abs(err[ext])
    assert len(ext) >= p.degree + 2
    top = np.sort(mags)[-(p.degree + 2):]
    assert top.min() >= 0.95 * top.max()


@pytest.mark.parametrize("target,interval", [(np.tanh, (-4, 4)), (lambda x: soft_clip(x, 5), (-60, 60)),
                                             (np.exp, (-1, 2))])
def test_minimax_beats_least_squares(target, interval):
    mm = fit(target, interval, 7, "minimax")
    ls = fit(target, interval, 7, "least-squares")
    assert mm.max_error <= ls.max_error + 1e-12


def test_symmetry_of_odd_fits():
    p = clip_poly(ClipSpec(5.0, "soft"))
    xs = np.linspace(0, 60, 301)
    np.testing.assert_allclose(p(-xs), -p(xs), atol=1e-12)
    assert soft_clip(-3.0, 5) == -soft_clip(3.0, 5)
    assert tanh_clip(-3.0, 5) == -tanh_clip(3.0, 5)


@given(st.floats(-2.5, 2.5))
def test_tanh_clip_taylor_bound(x):
    m = 5.0
    assert abs(tanh_clip(x, m) - x) <= abs(x) ** 3 / (3 * m * m) + 1e-15


def test_derivative_and_monomial():
    p = fit(lambda x: x**3, (-1, 1), 3)
    d = p.derivative()
    np.testing.assert_allclose(d(np.array([0.5])), [0.75], atol=1e-9)
    np.testing.assert_allclose(p.to_monomial(), [0, 0, 0, 1], atol=1e-9)


def test_poly_file_round_trip(tmp_path):
    p = clip_poly(ClipSpec())
    save_poly(tmp_path / "p.csv", p)
    q = load_poly(tmp_path / "p.csv")
    assert np.array_equal(p.coeffs, q.coeffs) and q.interval == p.interval and q.max_error == p.max_error
    (tmp_path / "bad.csv").write_text("nope\n")
    with pytest.raises(ValueError):
        load_poly(tmp_path / "bad.csv")


def _enc(values, ring_log=6):
    eng = Engine(EngineParams(ring_log=ring_log))
    v = np.zeros(eng.params.slot_count)
    v[: len(values)] = values
    return eng, eng.encrypt(eng.encode(v))


def test_constant_poly_consumes_nothing():
    eng, c = _enc([1.0, -2.0, 3.0])
    p = PolyApprox([0.75], (-1, 1), 0)
    out = eval_encrypted(eng, p, c)
    assert out.level == c.level
    np.testing.assert_allclose(out.slots, 0.75)


def test_degree7_encrypted_matches_plaintext():
    xs = np.random.default_rng(0).uniform(-4, 4, 32)
    eng, c = _enc(xs)
    p, _ = activation_library("tanh", 7)
    out = eval_encrypted(eng, p, c)
    assert c.level - out.level == 3
    np.testing.assert_allclose(out.slots[:32], p(xs), atol=1e-4)


def test_eval_on_packed_matrix_and_guard():
    eng = Engine(EngineParams(ring_log=8))
    a = np.random.default_rng(1).uniform(-6, 6, (2, 4, 4))
    A = pack(eng, a, make_layout(4, 4, 4, eng.params, 2))
    g = RangeGuard()
    p, _ = activation_library("tanh", 7)
    out = eval_encrypted(eng, p, A, g)
    np.testing.assert_allclose(unpack(out), p(a), atol=1e-4)
    assert g.max_abs == pytest.approx(np.max(np.abs(a)), abs=1e-6)
    assert g.out_of_range == int(np.sum(np.abs(a) > 4))


def test_eval_needs_levels():
    eng, c = _enc([0.1])
    low = eng.drop_level(c, 2)
    with pytest.raises(LevelError):
        eval_encrypted(eng, activation_library("tanh", 7)[0], low)


def test_exact_function_has_poly_cost():
    eng, c = _enc([0.3, -0.2])
    f = ExactFunction(np.tanh, 7)
    out = eval_encrypted(eng, f, c)
    assert c.level - out.level == 3
    np.testing.assert_allclose(out.slots[:2], np.tanh([0.3, -0.2]), atol=2.0**-30)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 31), st.integers(0, 2**31 - 1))
def test_encrypted_eval_property(degree, seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.uniform(-1, 1, degree + 1) / (1 + np.arange(degree + 1))
    p = PolyApprox(coeffs, (-3.0, 3.0), degree)
    xs = rng.uniform(-3, 3, 32)
    eng = Engine(EngineParams(ring_log=6, initial_level=12))
    c = eng.encrypt(eng.encode(xs))
    out = eval_encrypted(eng, p, c)
    assert c.level - out.level == p.depth
    np.testing.assert_allclose(out.slots[:32], cheb.chebval(p.to_unit(xs), coeffs), atol=1e-4)
