import math

import numpy as np
import pytest

from evosys import nse2d
from evosys.forcing import ProbeGrid, builtin_force, translation_bound_norm
from evosys.nse2d import NseParams
from evosys.phase import FourierBasis2D, PhaseVector
from evosys.stepping import StepSizeError


def direct_advection(c, basis):
    """Truncated convolution sum for the Leray-projected u . grad u (oracle)."""
    K, L = basis.K, basis.L
    n = 2 * K + 1
    out = np.zeros_like(c)
    ks = np.arange(-K, K + 1)
    kap = 2 * math.pi * ks / L
    for a in range(n):
        for b in range(n):
            cp = c[:, a, b]
            if not np.any(cp):
                continue
            for a2 in range(n):
                for b2 in range(n):
                    ka, kb = a + a2 - K, b + b2 - K
                    if not (0 <= ka < n and 0 <= kb < n):
                        continue
                    # (u_p . i kappa_q) u_q with p = (a, b), q = (a2, b2); axis 1 is x, axis 2 is y
                    dot = 1j * (cp[0] * kap[a2] + cp[1] * kap[b2])
                    out[:, ka, kb] += dot * c[:, a2, b2] / L
    return nse2d.leray_project(out, basis).coeffs


def test_advection_matches_direct_convolution(rng):
    basis = FourierBasis2D(2 * math.pi, 4)
    u = nse2d.random_state(basis, rng, 1.0, k0=10.0)
    got = nse2d.nonlinear_term(u, NseParams(L=basis.L, K=4))
    np.testing.assert_allclose(got, direct_advection(u.coeffs, basis), atol=1e-12)


def test_leray_projection(rng, fbasis):
    z = rng.standard_normal(fbasis.shape) + 1j * rng.standard_normal(fbasis.shape)
    p = nse2d.leray_project(z, fbasis).coeffs
    k1, k2 = fbasis.kappa
    np.testing.assert_allclose(k1 * p[0] + k2 * p[1], 0, atol=1e-12)
    np.testing.assert_allclose(nse2d.leray_project(p, fbasis).coeffs, p, atol=1e-13)


def test_trilinear_term_vanishes(rng):
    basis = FourierBasis2D(2 * math.pi, 8)
    u = nse2d.random_state(basis, rng, 3.0)
    b = PhaseVector(basis, nse2d.nonlinear_term(u, NseParams(K=8)))
    assert abs(nse2d.bilinear_pairing(u, b)) < 1e-11 * u.norm() ** 3


@pytest.mark.parametrize("k", [1, 2])
def test_shear_mode_decays_exactly(k):
    params = NseParams(nu=0.7, K=8, dt=0.01)
    u0 = nse2d.shear_mode(params.basis, 2.0, k)
    tr = nse2d.integrate(params, u0, None, (0.0, 2.0), sample_every=10)
    expect = u0.norm() * np.exp(-params.nu * k**2 * tr.times)
    np.testing.assert_allclose(tr.norms(), expect, rtol=1e-12)


def test_steady_force_keeps_steady_state(rng):
    params = NseParams(nu=1.0, K=8, dt=0.005)
    u_star = nse2d.random_state(params.basis, rng, 1.0)
    tr = nse2d.integrate(params, u_star, nse2d.steady_force(params, u_star), (0.0, 1.0), sample_every=50)
    # integrating-factor RK4 preserves equilibria only up to its truncation error
    assert np.max([(tr.at(i) - u_star).norm() for i in range(len(tr))]) < 1e-6


def test_energy_budget_of_forced_run(rng):
    params = NseParams(nu=1.0, K=8, dt=0.005)
    g = builtin_force("quasiperiodic", params.basis, amplitude=5.0)
    tr = nse2d.integrate(params, nse2d.random_state(params.basis, rng, 5.0), g, (0.0, 3.0))
    rep = nse2d.energy_budget(tr, g, params)
    # the Galerkin identity holds up to quadrature error, relative to the initial energy
    assert rep.max_violation < 1e-5 * rep.F[0]
    assert rep.identity_residual < 1e-5 * rep.F[0]


def test_cfl_violation_raises(rng):
    params = NseParams(K=16, dt=0.1)
    with pytest.raises(StepSizeError):
        nse2d.integrate(params, nse2d.random_state(params.basis, rng, 200.0), None, (0.0, 1.0))


def test_runs_are_deterministic(rng):
    params = NseParams(K=8, dt=0.01)
    u0 = nse2d.random_state(params.basis, rng, 4.0)
    g = builtin_force("constant", params.basis, amplitude=3.0)
    a = nse2d.integrate(params, u0, g, (0.0, 1.0), sample_every=10)
    b = nse2d.integrate(params, u0, g, (0.0, 1.0), sample_every=10)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_absorbing_radius_formula_and_entry():
    params = NseParams(nu=0.5, K=8, dt=0.01)
    g = builtin_force("constant", params.basis, amplitude=2.0)
    G = translation_bound_norm(g, ProbeGrid(horizon=10.0))
    ball = nse2d.absorbing_radius(params, G)
    alpha = params.nu * params.basis.lambda1
    assert ball.R_inf ** 2 == pytest.approx(G / (params.nu * (1 - math.exp(-alpha))))
    assert ball.R == pytest.approx(math.sqrt(2) * ball.R_inf)
    # a large initial state is inside the ball after the advertised entry time
    u0 = nse2d.shear_mode(params.basis, 30.0)
    te = math.ceil(ball.entry_time(u0.norm()) * 10) / 10
    tr = nse2d.integrate(params, u0, g, (0.0, te + 0.5), sample_every=10)
    assert np.all(tr.norms()[tr.times >= te] <= ball.R + 1e-9)


def test_invalid_params():
    with pytest.raises(ValueError):
        NseParams(nu=0.0)
    with pytest.raises(ValueError):
        NseParams(K=2)
