import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pnph.cell_solver import (FULL_CELL, ION, PORE_ONLY, POTENTIAL, build_operator,
                              elliptic_solve_periodic, face_coefficients, permittivity_field,
                              solve_correctors, solve_ion_corrector, solve_potential_corrector)
from pnph.errors import CompatibilityError, SolverError
from pnph.geometry import ReferenceCell, build_preset


def _layered(n=32, cut=12, eps=0.5, alpha=0.7):
    phase = np.zeros((n, n), np.uint8)
    phase[:cut, :] = 1
    return ReferenceCell.from_mask(phase, epsilon=eps, alpha=alpha)


def test_harmonic_face_average():
    c = np.array([[1.0, 3.0], [1.0, 3.0]])
    kf = face_coefficients(c)
    assert kf[1][0, 0] == pytest.approx(1.5)
    assert kf[0][0, 0] == pytest.approx(1.0)
    assert face_coefficients(np.array([[0.0, 2.0], [0.0, 2.0]]))[1][0, 0] == 0.0


def test_zero_rhs_gives_zero():
    u = elliptic_solve_periodic(np.ones((8, 8)), np.zeros((8, 8)))
    assert np.all(u == 0)


@pytest.mark.parametrize("method", ["cg", "direct"])
def test_fourier_mode_uses_discrete_eigenvalue(method):
    n = 32
    h = 1.0 / n
    y = (np.arange(n) + 0.5) * h
    rhs = np.tile(np.sin(2 * np.pi * y)[:, None], (1, n))
    u = elliptic_solve_periodic(np.ones((n, n)), rhs, method=method, tol=1e-12)
    lam = 4.0 * np.sin(np.pi * h) ** 2 / h ** 2
    assert np.abs(u - rhs / lam).max() < 1e-10
    # continuum value sin/(4 pi^2), relative error (pi h)^2 / 3 to leading order
    assert np.abs(u - rhs / (4 * np.pi ** 2)).max() < 0.5 * (np.pi * h) ** 2 / (4 * np.pi ** 2)


def test_masked_slab_matches_1d_analytic_solution():
    n = 64
    h = 1.0 / n
    mask = np.zeros((n, n), bool)
    a, b = 16, 48
    mask[:, a:b] = True
    y = (np.arange(n) + 0.5) * h
    L = (b - a) * h
    f = np.cos(np.pi * (y - a * h) / L)
    rhs = np.where(mask, np.tile(f, (n, 1)), 0.0)
    u = elliptic_solve_periodic(np.ones((n, n)), rhs, mask=mask, tol=1e-12)
    # -u'' = cos(pi s / L) with u' = 0 at both walls and zero mean
    exact = (L / np.pi) ** 2 * np.cos(np.pi * (y - a * h) / L)
    err = np.abs(u[0, a:b] - exact[a:b]).max()
    assert err < 2.0 * h ** 2 * (L / np.pi) ** 2 * (np.pi / L) ** 2
    assert np.all(u[:, :a] == 0)


def test_incompatible_rhs_rejected():
    with pytest.raises(CompatibilityError):
        elliptic_solve_periodic(np.ones((8, 8)), np.ones((8, 8)))


def test_iteration_cap_reported():
    rng = np.random.default_rng(3)
    rhs = rng.standard_normal((32, 32))
    rhs -= rhs.mean()
    coeff = 1.0 + rng.random((32, 32))
    with pytest.raises(SolverError) as exc:
        elliptic_solve_periodic(coeff, rhs, maxiter=2, tol=1e-14)
    assert exc.value.residual is not None


def test_uniform_coefficient_gives_zero_potential_corrector():
    cell = build_preset("rectangle_pore_2d", a=0.5, dims=(16, 16), epsilon=0.3, alpha=0.09)
    for r in range(2):
        xi = solve_potential_corrector(cell, r)
        assert np.abs(xi.values).max() < 1e-13


def test_layered_medium_harmonic_mean_and_piecewise_linear_corrector():
    eps, alpha, n, cut = 0.5, 0.7, 32, 12
    cell = _layered(n, cut, eps, alpha)
    xi = solve_potential_corrector(cell, 0, tol=1e-13)
    k1, k2 = eps ** 2, alpha
    f1 = cut / n
    H = 1.0 / (f1 / k1 + (1 - f1) / k2)
    h = 1.0 / n
    d = np.diff(xi.values[:, 0])
    # inside each layer the corrector slope is 1 - H/k
    assert np.allclose(d[1:cut - 1], h * (1 - H / k1), atol=1e-10)
    assert np.allclose(d[cut + 1:-1], h * (1 - H / k2), atol=1e-10)
    assert np.allclose(xi.values, xi.values[:, :1], atol=1e-12)


def test_straight_channel_along_axis_has_zero_corrector():
    cell = build_preset("straight_channel_2d", dims=(16, 16))
    xi = solve_potential_corrector(cell, 0)
    assert np.abs(xi.values[cell.pore]).max() < 1e-14
    ion = solve_ion_corrector(cell, 0, xi)
    assert np.abs(ion.values).max() < 1e-14


def test_straight_channel_across_axis_cancels_gradient():
    cell = build_preset("straight_channel_2d", dims=(16, 16))
    xi33, xiii = solve_correctors(cell)
    # within the pore, xi = y2 + const so grad(y2 - xi) = 0
    col = xiii[1].values[0, cell.pore[0]]
    assert np.allclose(np.diff(col), 1.0 / 16, atol=1e-10)


def test_corrector_metadata_and_zero_mean():
    cell = build_preset("circular_inclusion_2d", dims=(32, 32), epsilon=0.5, alpha=0.1)
    xi33, xiii = solve_correctors(cell)
    for r in range(2):
        assert xi33[r].family == POTENTIAL and xi33[r].domain == FULL_CELL
        assert xiii[r].family == ION and xiii[r].domain == PORE_ONLY
        assert xi33[r].direction == r
        assert abs(xi33[r].mean()) <= 1e-12
        assert abs(xiii[r].mean()) <= 1e-12
        assert np.all(xiii[r].values[~cell.pore] == 0)


def test_ion_corrector_is_potential_corrector_plus_constant():
    cell = build_preset("circular_inclusion_2d", dims=(32, 32), epsilon=0.5, alpha=0.1)
    xi33, xiii = solve_correctors(cell, tol=1e-12)
    diff = (xiii[0].values - xi33[0].values)[cell.pore]
    assert np.ptp(diff) < 1e-9


def test_shifted_cell_gives_shifted_corrector():
    cell = build_preset("circular_inclusion_2d", dims=(24, 24), epsilon=0.5, alpha=0.2)
    shifted = ReferenceCell.from_mask(np.roll(cell.phase, 3, axis=0), epsilon=0.5, alpha=0.2)
    a = solve_potential_corrector(cell, 0, tol=1e-12).values
    b = solve_potential_corrector(shifted, 0, tol=1e-12).values
    assert np.abs(np.roll(a, 3, axis=0) - b).max() < 1e-9


def test_reverse_direction_flips_sign():
    cell = build_preset("circular_inclusion_2d", dims=(24, 24), epsilon=0.5, alpha=0.2)
    a = solve_potential_corrector(cell, 1, tol=1e-12).values
    b = solve_potential_corrector(cell, [0.0, -1.0], tol=1e-12).values
    assert np.abs(a + b).max() < 1e-10


def test_energy_identity():
    cell = build_preset("circular_inclusion_2d", dims=(24, 24), epsilon=0.5, alpha=0.2)
    xi = solve_potential_corrector(cell, 0, tol=1e-12)
    coeff = permittivity_field(cell)
    op = build_operator(coeff, spacing=cell.spacing)
    u = xi.values[op.active]
    kf = face_coefficients(coeff)
    rhs = -(kf[0] - np.roll(kf[0], 1, axis=0)) / cell.spacing[0]
    lhs = u @ (op.matrix @ u)
    pairing = op.voxel_volume * (rhs[op.active] @ u)
    assert lhs == pytest.approx(pairing, rel=1e-9)


@given(st.floats(0.05, 2.0), st.one_of(st.just(0.0), st.floats(1e-3, 2.0)))
def test_cg_and_direct_agree(eps, alpha):
    cell = build_preset("circular_inclusion_2d", dims=(12, 12), epsilon=eps, alpha=alpha)
    a = solve_potential_corrector(cell, 0, tol=1e-12, method="cg").values
    b = solve_potential_corrector(cell, 0, method="direct").values
    scale = max(1e-12, np.abs(b).max())
    assert np.abs(a - b).max() <= 1e-8 * max(1.0, scale)


def test_disconnected_pore_is_reported(caplog):
    cell = build_preset("rectangle_pore_2d", a=0.25, dims=(16, 16))
    with caplog.at_level(logging.WARNING, logger="pnph.cell_solver"):
        solve_potential_corrector(cell.replace(alpha=0.0), 0)
    cell2 = ReferenceCell.from_mask(np.tile(np.array([1, 1, 0, 0, 1, 1, 0, 0], np.uint8), (8, 1)))
    with caplog.at_level(logging.WARNING, logger="pnph.cell_solver"):
        solve_potential_corrector(cell2, 1)
    assert any("disconnected" in r.message for r in caplog.records)


def test_ion_corrector_input_checks():
    cell = build_preset("straight_channel_2d", dims=(8, 8))
    other = build_preset("straight_channel_2d", p=0.25, dims=(8, 8))
    xi = solve_potential_corrector(cell, 0)
    with pytest.raises(ValueError):
        solve_ion_corrector(cell, 1, xi)
    with pytest.raises(ValueError):
        solve_ion_corrector(other, 0, xi)
    ion = solve_ion_corrector(cell, 0, xi)
    with pytest.raises(ValueError):
        solve_ion_corrector(cell, 0, ion)
    with pytest.raises(ValueError):
        solve_potential_corrector(cell, 2)


def test_corrector_csv(tmp_path):
    cell = build_preset("straight_channel_2d", dims=(4, 4))
    xi = solve_potential_corrector(cell, 1)
    path = tmp_path / "xi.csv"
    xi.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i,j,xi_value"
    assert len(lines) == 1 + cell.pore.sum()
