import math

import numpy as np
import pytest
from scipy.integrate import quad

from evosys import forcing, rds
from evosys.expr import ExpressionError, compile_expr
from evosys.forcing import (
    DEFAULT_DELTAS,
    ProbeGrid,
    builtin_force,
    classify_force,
    equicontinuity_modulus,
    force_from_terms,
    is_normal,
    normal_defect,
    pointwise_limit_probe,
    translate_symbol,
    translation_bound_norm,
    unit_profile,
    window_integrals,
)
from evosys.phase import FourierBasis2D, SineBasis

FB = FourierBasis2D(2 * math.pi, 6)
SB = SineBasis(1.0, 8)
SHORT = ProbeGrid(horizon=60.0, step=0.05)


@pytest.mark.parametrize("basis", [FB, SB])
@pytest.mark.parametrize("which", [0, 1])
def test_unit_profiles_have_unit_dual_norm(basis, which):
    assert basis.dual_norm2(unit_profile(basis, which)) == pytest.approx(1.0, rel=1e-14)


def test_quasiperiodic_window_integrals_closed_form():
    g = builtin_force("quasiperiodic", FB, amplitude=2.0)
    w1, w2 = 1.0, math.sqrt(2.0)
    starts = np.array([0.0, 0.7, 3.3, 11.1])
    got = window_integrals(g, starts, 0.5)
    # the two profiles are V'-orthogonal, so the integrand is 4 (cos^2 + sin^2)
    ref = [quad(lambda t: 4 * (math.cos(w1 * t) ** 2 + math.sin(w2 * t) ** 2), s, s + 0.5)[0] for s in starts]
    np.testing.assert_allclose(got, ref, rtol=1e-12)


def test_translation_bound_of_constant_force():
    g = builtin_force("constant", SB, amplitude=3.0)
    assert translation_bound_norm(g, SHORT) == pytest.approx(9.0, rel=1e-12)
    assert normal_defect(g, 0.25, SHORT) == pytest.approx(9.0 / 4, rel=1e-12)


def test_spike_train_window_integrals_are_one():
    g = builtin_force("spike_train", SB, amplitude=1.0)
    ws = window_integrals(g, np.arange(1, 11, dtype=float), 1.0)
    np.testing.assert_allclose(ws, 1.0, rtol=1e-12)


def test_symbol_translation_composes():
    g = builtin_force("quasiperiodic", SB)
    a = translate_symbol(translate_symbol(g, 0.3), 1.2)
    b = translate_symbol(g, 1.5)
    for t in (0.0, 0.77, 5.0):
        np.testing.assert_allclose(a.g(t), b.g(t), rtol=0, atol=1e-15)
        np.testing.assert_allclose(a.g(t), g.g(t + 1.5), rtol=0, atol=1e-15)


@pytest.mark.parametrize("name", ["constant", "quasiperiodic", "decaying"])
def test_smooth_forces_classify_normal(name):
    c = classify_force(builtin_force(name, FB, amplitude=5.0), eps=1e-2, probe=SHORT)
    assert c.translation_bounded and c.normal
    assert c.normality.delta is not None


def test_spike_train_is_translation_bounded_not_normal():
    g = builtin_force("spike_train", SB, amplitude=1.0)
    c = classify_force(g, eps=1e-2, probe=ProbeGrid(horizon=30.0))
    assert c.translation_bounded and not c.normal
    assert min(v for _, v in c.normality.table) >= 0.9
    assert len(c.normality.table) == len(DEFAULT_DELTAS)


def test_growing_force_is_not_translation_bounded():
    g = forcing.Symbol(force_from_terms(SB, [(unit_profile(SB), "t")], name="ramp"))
    c = classify_force(g, probe=SHORT)
    assert not c.translation_bounded and not c.normal


def test_is_normal_reports_first_passing_delta():
    g = builtin_force("constant", SB, amplitude=1.0)
    rep = is_normal(g, eps=0.1, probe=SHORT)
    # defect = delta, so the sweep stops at the first power of two <= 0.1
    assert rep.delta == 2.0**-4
    assert rep.as_dict()["defect_table"][-1]["defect"] == pytest.approx(2.0**-4)


def test_expression_grammar():
    f = compile_expr("sin(v) * exp(-T) + abs(v)**2", ("v", "t"))
    assert f(v=1.0, t=-3.0) == pytest.approx(math.sin(1.0) + 1.0)
    assert f(v=1.0, t=2.0) == pytest.approx(math.sin(1.0) * math.exp(-2.0) + 1.0)
    for bad in ("__import__('os')", "v.real", "lambda v: v", "open('x')", "v +"):
        with pytest.raises(ExpressionError):
            compile_expr(bad, ("v", "t"))


def test_modulus_of_lipschitz_family_shrinks():
    tab = equicontinuity_modulus(lambda v, t: np.sin(v) * np.cos(t), R=2.0, t_samples=np.linspace(0, 10, 11))
    assert tab.passes
    assert np.all(np.diff(tab.theta[::-1]) >= 0)


@pytest.mark.parametrize("name", ["example1", "example2"])
def test_examples_fail_equicontinuity(name):
    f = rds.builtin_nonlinearity(name)
    tab = equicontinuity_modulus(f, R=4.0)
    assert not tab.passes
    # down to gaps resolved by the sampled times the modulus does not shrink
    resolved = tab.l_grid >= 10.0 / tab.t_samples.max()
    assert tab.theta[resolved].min() > 0.5 * tab.theta[0]


def test_example1_pointwise_jump():
    f = rds.builtin_nonlinearity("example1")
    rep = pointwise_limit_probe(f, np.linspace(-1, 1, 2001), jump_tol=0.5)
    sizes = [j["size"] for j in rep.jumps]
    assert len(sizes) == 1 and sizes[0] == pytest.approx(1.0, abs=0.05)


def test_example2_probe_flags_divergence():
    f = rds.builtin_nonlinearity("example2")
    rep = pointwise_limit_probe(f, np.array([0.0, 0.5, math.pi / 2, 2.0]))
    assert rep.diverges_at(math.pi / 2)
    assert not rep.diverges_at(0.0)
