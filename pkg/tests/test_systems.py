import math
from dataclasses import replace

import numpy as np
import pytest

from evosys import nse2d, rds
from evosys.forcing import Symbol, builtin_force
from evosys.phase import PhaseVector, SetSample
from evosys.systems import (
    SystemHandle,
    Trajectory,
    a2_epsilon_from_defect,
    check_A2_energy,
    check_A3_cauchy,
    cut_piece,
    load_trajectory,
    omega_limit_sample,
    reach_sample,
    save_trajectory,
    translate,
)


@pytest.fixture
def nse_sys():
    params = nse2d.NseParams(K=6, dt=0.01)
    return SystemHandle("nse2d", params, builtin_force("constant", params.basis, amplitude=3.0), sample_every=5)


@pytest.fixture
def rds_sys():
    params = rds.RdsParams(ell=math.pi, M=16, dt=0.01)
    return SystemHandle("rds", params, Symbol(None, rds.builtin_nonlinearity("cubic", lam=2.5), id="ci"),
                        sample_every=5)


def test_translation_is_an_exact_semigroup(nse_sys, rng):
    u = nse_sys.integrate(nse_sys.random_initial(rng, 2.0), (0.0, 3.0))
    a = translate(translate(u, 0.5), 0.25)
    b = translate(u, 0.75)
    assert np.array_equal(a.coeffs, b.coeffs)
    assert a.symbol_id == b.symbol_id
    assert np.array_equal(b.coeffs[0], u.coeffs[15])
    with pytest.raises(ValueError):
        translate(u, 0.033)


def test_cut_piece_provenance(nse_sys, rng):
    u = nse_sys.integrate(nse_sys.random_initial(rng, 2.0), (0.0, 2.0), run_id="r7")
    p = cut_piece(u, 0.5, 1.0)
    assert p.T == pytest.approx(1.0) and p.provenance == ("r7", 0.5)
    assert np.array_equal(p.coeffs, u.coeffs[10:31])


@pytest.mark.parametrize("which", ["nse_sys", "rds_sys"])
def test_reach_sets_compose(which, request, rng):
    sys = request.getfixturevalue(which)
    A = SetSample.from_vectors([sys.random_initial(rng, 1.5) for _ in range(3)])
    a = reach_sample(sys, reach_sample(sys, A, 0.5), 0.7)
    b = reach_sample(sys, A, 1.2)
    np.testing.assert_allclose(a.points, b.points, atol=1e-12)
    assert np.array_equal(reach_sample(sys, A, 0.0).points, A.points)


def test_omega_sample_size(rds_sys, rng):
    A = SetSample.from_vectors([rds_sys.random_initial(rng, 1.0) for _ in range(2)])
    om = omega_limit_sample(rds_sys, A, 1.0, 3.0, 0.5)
    assert len(om) == 2 * 5


def test_save_load_roundtrip(tmp_path, nse_sys, rng):
    u = nse_sys.integrate(nse_sys.random_initial(rng, 1.0), (0.0, 1.0), run_id="x")
    v = load_trajectory(save_trajectory(tmp_path / "run", u, note="test"))
    assert np.array_equal(u.coeffs, v.coeffs)
    assert (v.t_start, v.dt, v.run_id, v.symbol_id) == (u.t_start, u.dt, u.run_id, u.symbol_id)


def test_refinement_matches_fine_steps(rds_sys, rng):
    big = rds.sine_mode(rds_sys.basis, 1, 30.0)
    coarse = rds_sys.integrate(big, (0.0, 3.0))
    assert coarse.meta["refined_until"] > 0
    fine = replace(rds_sys, params=replace(rds_sys.params, dt=0.01 / 64), sample_every=5 * 64)
    ref = fine.integrate(big, (0.0, 3.0))
    np.testing.assert_allclose(coarse.times, ref.times)
    err = np.abs(coarse.coeffs - ref.coeffs).max()
    assert err < 1e-6 * np.abs(ref.coeffs).max()
    with pytest.raises(Exception):
        replace(rds_sys, refine=False).integrate(big, (0.0, 3.0))


def test_entry_time_bound(nse_sys):
    ball = nse_sys.absorbing_ball(9.0)
    r0 = 20.0
    te = ball.entry_time(r0)
    assert r0**2 * math.exp(-ball.alpha * te) + ball.R_inf**2 == pytest.approx(ball.R**2)
    assert ball.entry_time(r0, ball.R_inf * 0.5) == math.inf
    assert ball.entry_time(0.1) == 0.0


def test_a2_on_monotone_and_bumpy_norms(sbasis):
    t = np.arange(0, 2.01, 0.01)
    amp = np.exp(-t) + 0.2 * (np.abs(t - 1.0) < 0.015)
    c = np.zeros((t.size,) + sbasis.shape)
    c[:, 0] = amp
    u = Trajectory(sbasis, 0.0, 0.01, c, "s", "r", {})
    rep = check_A2_energy(u, 0.05, 0.05)
    # the bump starts at t = 0.99; the best predecessor within delta is the oldest, t = 0.94
    assert rep.violations == 1 and rep.worst_time == pytest.approx(0.99)
    assert rep.min_eps == pytest.approx(0.2 + math.exp(-0.99) - math.exp(-0.94), rel=1e-12)
    assert check_A2_energy(u, rep.min_eps, 0.05).violations == 0
    assert a2_epsilon_from_defect(4.0, 1.0) == 2.0


def test_a3_fraction(sbasis):
    t = np.arange(0, 1.001, 0.01)
    runs = []
    for n in (1, 2, 4, 8):
        c = np.zeros((t.size,) + sbasis.shape)
        c[:, 0] = 1.0
        c[:, -1] = 1.0 / n  # weakly small, strongly small too
        runs.append(Trajectory(sbasis, 0.0, 0.01, c, "s", f"r{n}", {}))
    rep = check_A3_cauchy(runs, 1.0, tol_w=0.5)
    assert rep.strong_fraction == 1.0 and rep.pairs == 1
    with pytest.raises(ValueError):
        check_A3_cauchy(runs, 1.0, tol_w=1e-6)


def test_handle_validation(nse_sys):
    with pytest.raises(ValueError):
        SystemHandle("heat", nse_sys.params, nse_sys.symbol)
    with pytest.raises(ValueError):
        replace(nse_sys, sample_every=0)
