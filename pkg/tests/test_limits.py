import logging
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pnph.errors import CompatibilityError, ConfigError, PhysicalRegimeError
from pnph.limits import (DepletionError, ambipolar_coefficients, ambipolar_salt, ambipolar_species,
                         ambipolar_step, membrane_step, membrane_tensors, thin_dl_solve,
                         thin_film_potential)
from pnph.macro_solver import (AppliedCurrent, BoundarySpec, Dirichlet, MacroGrid, MacroState,
                               step_macro_pnp)
from pnph.tensors import EffectiveTensors, straight_channel_tensors


def _iso(d=1, D=0.4, p=0.5, eps=0.2, rho_s=0.0):
    A = D * np.eye(d)
    return EffectiveTensors(A, A, eps ** 2 * A, p, rho_s, eps)


# ---------------------------------------------------------------------------
# thin double layers


def test_thin_dl_salt_decays_with_discrete_eigenvalue():
    n, dt, steps = 32, 0.01, 5
    grid = MacroGrid((n,))
    t = _iso()
    x = grid.centers()[0]
    a = 0.2
    traj = thin_dl_solve(grid, 1.0 + a * np.cos(np.pi * x), t, dt=dt, steps=steps)
    h = 1.0 / n
    lam = 4.0 * math.sin(math.pi * h / 2) ** 2 / h ** 2
    factor = 1.0 / (1.0 + dt * (0.4 / 0.5) * lam)
    expected = 1.0 + a * factor ** steps * np.cos(np.pi * x)
    assert np.abs(traj.c[-1] - expected).max() < 1e-12
    assert len(traj.times) == steps + 1 and traj.times[-1] == pytest.approx(steps * dt)


def test_thin_dl_dirichlet_potential_is_linear_for_uniform_salt():
    grid = MacroGrid((20,))
    bc = BoundarySpec({"x-": Dirichlet(1.0, 1.0, 0.0), "x+": Dirichlet(1.0, 1.0, 1.0)})
    traj = thin_dl_solve(grid, 1.0, _iso(), bc=bc, steps=2)
    x = grid.centers()[0]
    assert np.abs(traj.phi[-1] - x).max() < 1e-12
    assert np.abs(traj.c[-1] - 1.0).max() < 1e-12


def test_thin_dl_species_difference_balances_fixed_charge():
    grid = MacroGrid((16,))
    p, rho_s = 0.5, -0.2
    t = _iso(p=p, rho_s=rho_s)
    bc = BoundarySpec({"x-": AppliedCurrent(0.3), "x+": AppliedCurrent(-0.3)})
    traj = thin_dl_solve(grid, 1.0, t, bc=bc, dt=5e-3, steps=10)
    assert np.allclose(traj.c_plus() - traj.c_minus(), -rho_s / p, atol=1e-15)
    # applied-current faces carry no salt
    h = grid.cell_volume
    assert traj.c[-1].sum() * h == pytest.approx(traj.c[0].sum() * h, rel=1e-12)
    assert max(traj.current_residuals) < 1e-10
    s = traj.state()
    assert isinstance(s, MacroState) and s.time == pytest.approx(0.05)
    # the counter-ion drift term makes the salt profile non-uniform
    assert traj.c[-1][0] != traj.c[-1][-1]


def test_thin_dl_lagged_mode_approaches_implicit():
    grid = MacroGrid((16,))
    t = _iso(rho_s=-0.2)
    bc = BoundarySpec({"x-": AppliedCurrent(0.3), "x+": AppliedCurrent(-0.3)})
    ref = thin_dl_solve(grid, 1.0, t, bc=bc, dt=1e-3, steps=20).c[-1]
    lag = thin_dl_solve(grid, 1.0, t, bc=bc, dt=1e-3, steps=20, implicit=False).c[-1]
    assert 0 < np.abs(ref - lag).max() < 1e-3


def test_thin_dl_matches_macro_pnp_for_small_debye_length():
    p, rho_s = 0.5, -0.2
    grid = MacroGrid((40,))
    bc = BoundarySpec({"x-": AppliedCurrent(0.5), "x+": AppliedCurrent(-0.5)})
    traj = thin_dl_solve(grid, 1.0, _iso(p=p, rho_s=rho_s), bc=bc, dt=2e-3, steps=10)
    dists = []
    for eps in (0.1, 0.05):
        t = _iso(p=p, rho_s=rho_s, eps=eps)
        rho = -rho_s / (2 * p)
        s = MacroState(grid, np.full(40, 1 + rho), np.full(40, 1 - rho), traj.phi[0])
        for _ in range(10):
            s = step_macro_pnp(s, t, bc, 2e-3, mode="implicit")
        dists.append(np.sqrt(grid.cell_volume * ((0.5 * (s.c_plus + s.c_minus) - traj.c[-1]) ** 2).sum()))
    assert dists[1] < dists[0]


def test_thin_dl_unbalanced_current_rejected():
    grid = MacroGrid((8,))
    with pytest.raises(CompatibilityError):
        thin_dl_solve(grid, 1.0, _iso(), bc=BoundarySpec({"x-": AppliedCurrent(0.1)}))


def test_thin_dl_depletion(caplog):
    grid = MacroGrid((8,))
    c0 = np.ones(8)
    c0[3] = 0.0
    with pytest.raises(DepletionError) as exc:
        thin_dl_solve(grid, c0, _iso())
    assert exc.value.node == 3
    assert issubclass(DepletionError, PhysicalRegimeError)
    with caplog.at_level(logging.WARNING, logger="pnph.limits"):
        thin_dl_solve(grid, 0.1, _iso(rho_s=-0.2), steps=0)
    assert any("outside its range" in r.message for r in caplog.records)


def test_thin_dl_argument_checks():
    grid = MacroGrid((4,))
    with pytest.raises(ValueError):
        thin_dl_solve(grid, 1.0, _iso(), dt=0.0)
    with pytest.raises(ConfigError):
        thin_dl_solve(MacroGrid((4, 4)), 1.0, _iso(d=1))
    with pytest.raises(ConfigError):
        thin_dl_solve(None, 1.0, _iso())


# ---------------------------------------------------------------------------
# membrane and thin film


def test_membrane_tensors():
    t = straight_channel_tensors(0.5, epsilon=0.3)
    m = membrane_tensors(t, 0.01)
    assert np.array_equal(m.M_hat, t.D_hat)
    assert np.allclose(m.eps_hat, 1e-4 * t.D_hat)
    bad = EffectiveTensors(t.D_hat, 2 * t.D_hat, t.eps_hat, 0.5)
    with pytest.raises(ConfigError):
        membrane_tensors(bad, 0.1)
    with pytest.raises(ConfigError):
        membrane_tensors(t, 0.0)


def test_membrane_step_is_macro_step_with_membrane_tensors():
    grid = MacroGrid((12,))
    t = _iso(rho_s=-0.1)
    x = grid.centers()[0]
    s = MacroState(grid, 1.1 + 0.1 * np.cos(np.pi * x), 0.9 + 0.1 * np.cos(np.pi * x), np.zeros(12))
    a = membrane_step(s, t, 0.05, dt=0.01)
    b = step_macro_pnp(s, membrane_tensors(t, 0.05), BoundarySpec(), 0.01, mode="implicit")
    assert np.array_equal(a.c_plus, b.c_plus) and np.array_equal(a.phi, b.phi)


def test_thin_film_potential_linear_between_electrodes():
    grid = MacroGrid((10, 6))
    t = _iso(d=2)
    bc = BoundarySpec({"x-": Dirichlet(1, 1, 2.0), "x+": Dirichlet(1, 1, -1.0)})
    phi = thin_film_potential(grid, t, bc)
    x = grid.centers()[0]
    assert np.abs(phi - (2.0 - 3.0 * x)).max() < 1e-12


def test_thin_film_requires_dirichlet_in_every_region():
    t = straight_channel_tensors(0.5, d=2, axis=1)
    with pytest.raises(ConfigError):
        thin_film_potential(MacroGrid((6, 4)), t, BoundarySpec())
    # rows are decoupled, so a y-face electrode leaves other rows floating
    with pytest.raises(ConfigError):
        thin_film_potential(MacroGrid((6, 4), axes=(1, 0)), t,
                            BoundarySpec({"x-": Dirichlet(1, 1, 0.0)}))


# ---------------------------------------------------------------------------
# ambipolar


@pytest.mark.parametrize("D,M,kT", [(1.0, 1.0, 1.0), (2.0, 2.0, 1.0), (0.5, 0.25, 2.0)])
def test_ambipolar_symmetric_case(D, M, kT):
    a = ambipolar_coefficients(1, 1, D, D, M, M, kT)
    assert a.D_bar == D
    assert a.z_bar == 1.0


def test_ambipolar_asymmetric_valence_against_exact_fractions():
    args = dict(z_plus=2, z_minus=1, D_plus=3, D_minus=1, M_plus=3, M_minus=1, kT=1)
    F = {k: Fraction(v) for k, v in args.items()}
    D_bar = (F["z_plus"] * F["M_plus"] * F["D_minus"] + F["z_minus"] * F["M_minus"] * F["D_plus"]) \
        / (F["z_plus"] * F["M_plus"] + F["z_minus"] * F["M_minus"])
    z_bar = 2 * F["z_plus"] * F["z_minus"] * F["M_plus"] * F["M_minus"] * F["kT"] \
        / (F["z_plus"] * F["D_minus"] * F["M_plus"] + F["z_minus"] * F["D_plus"] * F["M_minus"])
    a = ambipolar_coefficients(**args)
    assert a.D_bar == float(D_bar) and a.z_bar == float(z_bar)
    b = ambipolar_coefficients(2, 1, 1, 1, 1, 1)
    assert b.z_bar == float(Fraction(4, 3)) and b.D_bar == 1.0


@given(st.floats(0.1, 10), st.floats(0.1, 10))
def test_ambipolar_diffusivity_is_between_species(Dp, Dm):
    a = ambipolar_coefficients(1, 1, Dp, Dm, Dp, Dm)
    assert min(Dp, Dm) * (1 - 1e-12) <= a.D_bar <= max(Dp, Dm) * (1 + 1e-12)
    # Einstein relation: the harmonic-type mean 2 Dp Dm / (Dp + Dm)
    assert a.D_bar == pytest.approx(2 * Dp * Dm / (Dp + Dm), rel=1e-12)


def test_ambipolar_coefficients_reject_bad_input():
    with pytest.raises(ValueError):
        ambipolar_coefficients(1, 1, 0.0, 1, 1, 1)
    with pytest.raises(ValueError):
        ambipolar_coefficients(1, -1, 1, 1, 1, 1)


def test_ambipolar_salt_and_species_round_trip():
    a = ambipolar_coefficients(2, 1, 1, 1, 1, 1)
    p, rho_s = 0.4, -0.2
    c = np.array([1.0, 2.0, 3.0])
    Cp, Cm = ambipolar_species(c, a, rho_s, p)
    assert np.allclose(p * (2 * Cp - Cm) + rho_s, 0.0, atol=1e-15)
    assert np.allclose(ambipolar_salt(Cp, Cm, a, rho_s, p), c, atol=1e-14)
    with pytest.raises(ValueError):
        ambipolar_salt(Cp + 0.1, Cm, a, rho_s, p)
    with pytest.raises(PhysicalRegimeError):
        ambipolar_species(np.array([0.1]), a, 0.5, p)


def _ambipolar_setup(p):
    grid = MacroGrid((30, 20))
    t = straight_channel_tensors(p, d=2, axis=1)
    x, y = grid.centers()
    c = 1.0 + 0.3 * np.cos(2 * np.pi * x) * np.cos(np.pi * y)
    rho_s = -0.1 * (1 + 0.5 * np.sin(np.pi * x))
    phi = 0.2 * x + 0.05 * np.cos(3 * np.pi * x)
    return grid, c, t, rho_s, phi


def test_ambipolar_step_does_not_depend_on_porosity():
    a = ambipolar_coefficients(1, 1, 1.3, 0.7, 1.3, 0.7)
    out = []
    for p in (0.3, 0.7):
        grid, c, t, rho_s, phi = _ambipolar_setup(p)
        for _ in range(4):
            c = ambipolar_step(grid, c, a, t, rho_s, phi, 0.01)
        out.append(c)
    assert np.array_equal(out[0], out[1])


def test_ambipolar_step_conserves_salt_with_closed_faces():
    a = ambipolar_coefficients(2, 1, 1.3, 0.7, 1.3, 0.7, kT=1.0)
    grid, c, t, rho_s, phi = _ambipolar_setup(0.5)
    c1 = ambipolar_step(grid, c, a, t, rho_s, phi, 0.01, e=2.0)
    assert c1.sum() == pytest.approx(c.sum(), rel=1e-13)
    # rows do not exchange salt across the blocked axis
    assert np.allclose(c1.sum(axis=0), c.sum(axis=0), rtol=1e-13)


def test_ambipolar_step_pure_diffusion_oracle():
    n, dt = 32, 0.01
    grid = MacroGrid((n,))
    t = _iso(D=0.4, p=0.5)
    a = ambipolar_coefficients(1, 1, 1.5, 1.5, 1.5, 1.5)
    x = grid.centers()[0]
    c = ambipolar_step(grid, 1.0 + 0.2 * np.cos(np.pi * x), a, t, 0.0, 0.0, dt)
    h = 1.0 / n
    lam = 4.0 * math.sin(math.pi * h / 2) ** 2 / h ** 2
    factor = 1.0 / (1.0 + dt * 1.5 * (0.4 / 0.5) * lam)
    assert np.abs(c - (1.0 + 0.2 * factor * np.cos(np.pi * x))).max() < 1e-12
