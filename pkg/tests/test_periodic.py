import numpy as np
import pytest
import scipy.linalg

import tissue as T
from tissue.errors import FixedPointError
from tissue.micro import initial_jump, jump_l2, simulate
from tissue.periodic import (find_periodic, find_periodic_regularized,
                             orbit_distance, poincare_map,
                             verify_energy_estimates)

from conftest import make_micro
from oracles import DenseLinearStepper


def test_constant_drive_zero_jump_invariant(small_domain):
    system = make_micro(small_domain, drive=("constant", "constant", 2.0))
    out = poincare_map(system, np.zeros(small_domain.n_facets))
    assert np.max(np.abs(out)) < 1e-12


def test_period_map_matches_dense_monodromy(small_domain):
    kappa = 1.0
    system = make_micro(small_domain, cond=(2.0, 1.0), law=("linear",),
                        kappa=kappa, dt=1e-2)
    oracle = DenseLinearStepper(small_domain,
                                T.make_conductivity(small_domain.cell, 2.0, 1.0),
                                system.drive, system.params, kappa)
    mat, off = oracle.affine_period_map(100)
    nf = small_domain.n_facets
    # offset = image of zero; columns = responses to basis jumps
    p0 = poincare_map(system, np.zeros(nf))
    assert np.max(np.abs(p0 - off)) < 1e-8
    for e in (0, nf // 2, nf - 1):
        basis = np.zeros(nf)
        basis[e] = 1.0
        pe = poincare_map(system, basis)
        assert np.max(np.abs(pe - (mat[:, e] + off))) < 1e-8


def test_period_map_is_contraction_for_coercive_law(small_domain):
    system = make_micro(small_domain, law=("tanh",), kappa=1.0)
    rng = np.random.default_rng(0)
    w1 = rng.uniform(-1, 1, small_domain.n_facets)
    w2 = rng.uniform(-1, 1, small_domain.n_facets)
    num = jump_l2(small_domain, poincare_map(system, w1) - poincare_map(system, w2))
    den = jump_l2(small_domain, w1 - w2)
    assert num / den < 1.0


def test_fixed_point_matches_dense_affine_solve(small_domain):
    kappa = 1.0
    system = make_micro(small_domain, cond=(2.0, 1.0), law=("linear",),
                        kappa=kappa, dt=1e-2)
    oracle = DenseLinearStepper(small_domain,
                                T.make_conductivity(small_domain.cell, 2.0, 1.0),
                                system.drive, system.params, kappa)
    mat, off = oracle.affine_period_map(100)
    w_star = scipy.linalg.solve(np.eye(len(off)) - mat, off)
    orbit = find_periodic(system, tol=1e-10)
    assert np.max(np.abs(orbit.jumps[0] - w_star)) < 1e-8


def test_noncoercive_law_orbit_converges(small_domain):
    system = make_micro(small_domain, law=("sin",))
    orbit = find_periodic(system, tol=1e-8)
    assert orbit.defect <= 1e-8
    assert orbit.method == "picard"
    assert orbit.steps_per_period == 100


def test_constant_drive_constant_orbit(small_domain):
    system = make_micro(small_domain, drive=("constant", "constant", 1.5))
    orbit = find_periodic(system, tol=1e-10)
    assert np.max(np.abs(orbit.jumps)) < 1e-10
    u = system.bulk_at(0.0, orbit.jumps[0])
    assert np.max(np.abs(u - 1.5)) < 1e-10


def test_picard_defects_nonincreasing(small_domain):
    system = make_micro(small_domain, law=("sin",))
    with pytest.raises(FixedPointError) as err:
        find_periodic(system, tol=1e-16, max_iters=8)
    defects = err.value.defects
    assert len(defects) == 8
    assert all(b <= a * (1 + 1e-9) for a, b in zip(defects, defects[1:]))


def test_orbit_time_shift_consistency(small_domain):
    system = make_micro(small_domain, law=("sin",))
    orbit = find_periodic(system, tol=1e-9)
    # restart the dynamics mid-period on the orbit; it must stay on it
    n_half = orbit.steps_per_period // 2
    dt = orbit.dt
    w = orbit.jumps[n_half].copy()
    for k in range(n_half, orbit.steps_per_period):
        w = system.stepper.step((k + 1) * dt, w, dt).jump
    gap = jump_l2(small_domain, w - orbit.jumps[-1])
    assert gap <= orbit.defect + 1e-12


def test_orbit_unique_from_different_starts(small_domain):
    system = make_micro(small_domain, law=("sin",))
    tol = 1e-9
    o1 = find_periodic(system, tol=tol,
                       w0=initial_jump(small_domain, "random", 5.0, seed=1))
    o2 = find_periodic(system, tol=tol,
                       w0=initial_jump(small_domain, "random", 5.0, seed=2))
    gap = max(jump_l2(small_domain, a - b)
              for a, b in zip(o1.jumps, o2.jumps))
    assert gap <= 10 * tol


def test_regularized_sequence_contracts(small_domain):
    system = make_micro(small_domain, law=("sin",))
    orbits = find_periodic_regularized(system, (1e-1, 1e-2, 1e-3), tol=1e-9)
    assert [o.delta for o in orbits] == [1e-1, 1e-2, 1e-3]
    assert all(o.method == "delta_sequence" for o in orbits)
    d01 = orbit_distance(system, orbits[0], orbits[1])
    d12 = orbit_distance(system, orbits[1], orbits[2])
    assert d01 > d12 > 0.0
    direct = find_periodic(system, tol=1e-9)
    assert orbit_distance(system, orbits[2], direct) < 1e-4


def test_regularized_linear_equals_shifted_linear(small_domain):
    # the shifted linear law is itself linear: the orbit must match the
    # direct orbit of that law
    system = make_micro(small_domain, law=("linear",), kappa=1.0, dt=1e-2)
    orbit_reg = find_periodic_regularized(system, (0.5,), tol=1e-10)[0]
    shifted = make_micro(small_domain, law=("linear",), kappa=1.5, dt=1e-2)
    orbit_direct = find_periodic(shifted, tol=1e-10)
    gap = orbit_distance(system, orbit_reg, orbit_direct)
    assert gap < 1e-8


def test_delta_sequence_validation(small_domain):
    system = make_micro(small_domain)
    with pytest.raises(ValueError, match="decreasing"):
        find_periodic_regularized(system, (1e-2, 1e-1))
    with pytest.raises(ValueError, match="1e-6"):
        find_periodic_regularized(system, (1e-3, 1e-8))


def test_energy_estimates_zero_drive(small_domain):
    system = make_micro(small_domain, drive=("constant", "constant", 0.0))
    orbit = find_periodic(system, tol=1e-12)
    rep = verify_energy_estimates(orbit, system)
    assert rep["passed"]
    assert rep["gradient_bound"]["lhs"] == pytest.approx(0.0, abs=1e-12)
    assert rep["rate_bound"]["lhs"] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("law,kw", [(("linear",), {"kappa": 1.0}),
                                    (("sin",), {})])
def test_energy_estimates_hold_with_margin(small_domain, law, kw):
    system = make_micro(small_domain, law=law, **kw)
    orbit = find_periodic(system, tol=1e-9)
    rep = verify_energy_estimates(orbit, system)
    assert rep["passed"]
    assert rep["gradient_bound"]["margin"] >= 0.0
    assert rep["rate_bound"]["margin"] >= 0.0


def test_orbit_states_satisfy_step_contracts(small_domain):
    system = make_micro(small_domain, law=("cubic",))
    orbit = find_periodic(system, tol=1e-9)
    # re-advancing each stored state reproduces the next stored state
    dt = orbit.dt
    for n in (0, 17, 50, 99):
        res = system.stepper.step((n + 1) * dt, orbit.jumps[n].copy(), dt)
        assert np.max(np.abs(res.jump - orbit.jumps[n + 1])) < 1e-12
