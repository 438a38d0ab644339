import math

import numpy as np
import pytest
from scipy.integrate import solve_bvp

from evosys import rds
from evosys.forcing import Symbol, builtin_force
from evosys.rds import RdsOperator, RdsParams
from evosys.stepping import StepSizeError


def test_grid_transform_roundtrip(rng):
    params = RdsParams(ell=2.0, M=16)
    op = RdsOperator(params)
    c = rng.standard_normal(16)
    np.testing.assert_allclose(op.from_grid(op.to_grid(c)), c, atol=1e-13)
    # the first coefficient of sqrt(2/ell) sin(pi x / ell) is one
    u = math.sqrt(2 / params.ell) * np.sin(np.pi * op.x / params.ell)
    np.testing.assert_allclose(op.from_grid(u), np.eye(16)[0], atol=1e-13)


@pytest.mark.parametrize("m", [1, 3])
def test_heat_equation_decays_exactly(m):
    params = RdsParams(ell=1.5, a=0.3, M=8, dt=0.01)
    u0 = rds.sine_mode(params.basis, m, 2.0)
    tr = rds.integrate(params, u0, None, (0.0, 1.0), sample_every=10)
    rate = params.a * (m * math.pi / params.ell) ** 2
    np.testing.assert_allclose(tr.norms(), 2.0 * np.exp(-rate * tr.times), rtol=1e-12)


@pytest.mark.parametrize("name", ["example1", "example2", "example3", "cubic", "linear"])
def test_builtin_constants_hold(name):
    f = rds.builtin_nonlinearity(name, lam=2.5) if name == "cubic" else rds.builtin_nonlinearity(name)
    rep = rds.validate_nonlinearity(f, np.linspace(-12, 12, 4801), np.concatenate(([0.0], np.geomspace(0.01, 1e3, 60))))
    assert rep.passes, rep.as_dict()


def test_wrong_constants_fail_validation():
    f = rds.nonlinearity_from_expr("v**3", 4.0, 1.0, 0.0, 0.1)
    assert not rds.validate_nonlinearity(f, np.linspace(-5, 5, 101), [0.0]).passes


def test_chafee_infante_steady_state_matches_bvp():
    lam, ell = 2.5, math.pi
    params = RdsParams(ell=ell, M=32, dt=0.01)
    sigma = Symbol(None, rds.builtin_nonlinearity("cubic", lam=lam), id="ci")
    tr = rds.integrate(params, rds.sine_mode(params.basis, 1, 0.5), sigma, (0.0, 40.0), sample_every=4000)
    op = RdsOperator(params)
    u_end = op.to_grid(tr.coeffs[-1])

    def ode(x, y):
        return np.vstack((y[1], y[0] ** 3 - lam * y[0]))

    x = np.linspace(0, ell, 201)
    sol = solve_bvp(ode, lambda a, b: np.array([a[0], b[0]]), x, np.vstack((np.sin(x), np.cos(x))), tol=1e-8, max_nodes=100000)
    assert sol.success
    np.testing.assert_allclose(u_end, sol.sol(op.x)[0], atol=1e-6)


def test_energy_identity_converges_at_fourth_order():
    basis = RdsParams(M=16).basis
    sigma = Symbol(builtin_force("quasiperiodic", basis, amplitude=3.0).force,
                   rds.builtin_nonlinearity("cubic", lam=1.0), id="cq")
    # smooth data: rough data make the quadrature of the stiff dissipation dominate
    u0 = rds.sine_mode(basis, 1, 2.0) + rds.sine_mode(basis, 2, 1.0)
    res = []
    for dt in (0.002, 0.001):
        params = RdsParams(M=16, dt=dt)
        tr = rds.integrate(params, u0, sigma, (0.0, 1.0))
        res.append(rds.energy_identity_check(tr, sigma, params).max_residual)
    assert res[1] < 1e-4
    assert math.log2(res[0] / res[1]) > 3.0


def test_stiff_reaction_raises():
    params = RdsParams(M=8, dt=0.5)
    sigma = Symbol(None, rds.builtin_nonlinearity("cubic"), id="c")
    with pytest.raises(StepSizeError):
        rds.integrate(params, rds.sine_mode(params.basis, 1, 10.0), sigma, (0.0, 1.0))


def test_absorbing_radius_rds():
    params = RdsParams(ell=2.0, a=0.5, M=8, dt=0.01)
    f = rds.builtin_nonlinearity("cubic", lam=1.0)
    ball = rds.absorbing_radius_rds(params, 3.0, f)
    alpha = 0.5 * (math.pi / 2) ** 2
    expect = 2 * f.Cdiss * 2.0 / alpha + (3.0 / 0.5) / (1 - math.exp(-alpha))
    assert ball.R_inf ** 2 == pytest.approx(expect)
    with pytest.raises(ValueError):
        rds.absorbing_radius_rds(params, -1.0, f)


def test_invalid_params():
    with pytest.raises(ValueError):
        RdsParams(a=0.0)
    with pytest.raises(ValueError):
        rds.builtin_nonlinearity("cubic", p=3)
    with pytest.raises(ValueError):
        rds.builtin_nonlinearity("nope")
