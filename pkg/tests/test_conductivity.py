import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import jn_zeros

from pnph.conductivity import (cheeger_lower_bound, cheeger_rectangle, conductivity_estimate,
                               conductivity_report, first_dirichlet_eigenvalue,
                               optimize_rectangle, rectangle_eigenvalue, rectangle_grid_search,
                               write_report)
from pnph.errors import GeometryError
from pnph.geometry import ReferenceCell


def _rect_cell(n, fill=(1.0, 1.0), lengths=None):
    """Pore rectangle filling ``fill`` of each side, surrounded by a one-voxel solid rim."""
    phase = np.zeros((n, n), np.uint8)
    k = [int(round(f * (n - 2))) for f in fill]
    phase[1:1 + k[0], 1:1 + k[1]] = 1
    h = 1.0 / (n - 2)
    return ReferenceCell.from_mask(phase, lengths=lengths or (n * h, n * h)), k[0] * h, k[1] * h


def test_unit_square_eigenvalue():
    cell, L1, L2 = _rect_cell(66)
    eig = first_dirichlet_eigenvalue(cell)
    exact = 2 * math.pi ** 2
    assert abs(eig.theta_1 - exact) / exact < 1e-3
    assert eig.residual <= 1e-8 * eig.theta_1
    assert np.all(eig.u_1[cell.pore] > 0) and np.all(eig.u_1[~cell.pore] == 0)
    vol = cell.voxel_volume
    assert (eig.u_1 ** 2).sum() * vol == pytest.approx(1.0, rel=1e-12)


def test_eigenvalue_converges_under_refinement():
    errs = []
    for n in (18, 34, 66):
        cell, _, _ = _rect_cell(n)
        errs.append(abs(first_dirichlet_eigenvalue(cell).theta_1 - 2 * math.pi ** 2))
    assert errs[0] > errs[1] > errs[2]
    # second order: each halving of h cuts the error about fourfold
    assert errs[1] / errs[2] > 3.0


def test_rectangle_matches_closed_form():
    cell, L1, L2 = _rect_cell(66, fill=(1.0, 0.5))
    eig = first_dirichlet_eigenvalue(cell)
    assert eig.theta_1 == pytest.approx(rectangle_eigenvalue(L1, L2), rel=2e-3)


def test_disk_matches_bessel_zero():
    n, R = 96, 0.4
    h = 1.0 / n
    y = (np.arange(n) + 0.5) * h
    Y1, Y2 = np.meshgrid(y, y, indexing="ij")
    phase = ((Y1 - 0.5) ** 2 + (Y2 - 0.5) ** 2 < R ** 2).astype(np.uint8)
    eig = first_dirichlet_eigenvalue(ReferenceCell.from_mask(phase))
    exact = jn_zeros(0, 1)[0] ** 2 / R ** 2
    # staircase boundary: first-order accuracy in h
    assert abs(eig.theta_1 - exact) / exact < 3 * h / R


def test_eigenvalue_decreases_with_domain_size():
    small = first_dirichlet_eigenvalue(_rect_cell(34, fill=(0.5, 0.5))[0]).theta_1
    large = first_dirichlet_eigenvalue(_rect_cell(34, fill=(1.0, 0.5))[0]).theta_1
    assert large < small


def test_disconnected_pore_takes_smallest_component_eigenvalue():
    n = 40
    big = np.zeros((n, n), np.uint8)
    big[2:22, 2:30] = 1
    small = np.zeros((n, n), np.uint8)
    small[26:34, 4:12] = 1
    both = big | small
    t_big = first_dirichlet_eigenvalue(ReferenceCell.from_mask(big)).theta_1
    t_small = first_dirichlet_eigenvalue(ReferenceCell.from_mask(small)).theta_1
    t_both = first_dirichlet_eigenvalue(ReferenceCell.from_mask(both), tol=1e-10).theta_1
    assert t_big < t_small
    assert t_both == pytest.approx(t_big, rel=1e-9)


def test_empty_pore_rejected():
    with pytest.raises(GeometryError):
        ReferenceCell.from_mask(np.zeros((6, 6), np.uint8))


def test_cheeger_number_of_unit_square():
    assert cheeger_rectangle(1.0, 1.0) == pytest.approx(2 + math.sqrt(math.pi), rel=1e-14)
    with pytest.raises(ValueError):
        cheeger_rectangle(0.0, 1.0)


@given(st.floats(0.05, 20), st.floats(0.05, 20))
def test_cheeger_bound_below_rectangle_eigenvalue(L1, L2):
    h = cheeger_rectangle(L1, L2)
    assert h > 0
    assert cheeger_lower_bound(h) <= rectangle_eigenvalue(L1, L2)
    # symmetric and decreasing in each side
    assert cheeger_rectangle(L2, L1) == pytest.approx(h, rel=1e-12)
    assert cheeger_rectangle(1.1 * L1, L2) < h


def test_cheeger_bound_holds_for_discrete_square():
    cell, L1, L2 = _rect_cell(66)
    theta = first_dirichlet_eigenvalue(cell).theta_1
    assert theta >= cheeger_lower_bound(cheeger_rectangle(L1, L2))


def test_conductivity_estimate_by_hand():
    assert conductivity_estimate(0.5, 0.1, 2.0, 20.0, 1.0) == 0.5 * (0.01 * 20.0 / 4.0 + 1.0)
    with pytest.raises(ZeroDivisionError):
        conductivity_estimate(0.5, 0.1, 0.0, 20.0, 1.0)
    with pytest.raises(ValueError):
        conductivity_estimate(0.0, 0.1, 1.0, 20.0, 1.0)


@given(st.floats(0.01, 1), st.floats(0.01, 2), st.floats(1, 100), st.floats(0, 5))
def test_conductivity_estimate_is_monotone(p, eps, theta, c):
    base = conductivity_estimate(p, eps, 1.0, theta, c)
    assert base > 0 or c == 0
    assert conductivity_estimate(p, eps, 1.0, 2 * theta, c) >= base
    assert conductivity_estimate(p, eps, 2.0, theta, c) <= base


def test_optimize_rectangle_picks_smallest_height():
    L1, sigma = optimize_rectangle(1.0, (0.2, 2.0), p=0.5, epsilon=0.1, c=1.0)
    assert L1 == 0.2
    h = cheeger_rectangle(0.2, 1.0)
    assert sigma == conductivity_estimate(0.5, 0.1, 1.0, (h / 2) ** 2, 1.0)
    for objective in ("eigenvalue", "cheeger"):
        best, vals, grid = rectangle_grid_search(1.0, (0.2, 2.0), objective=objective)
        assert best == pytest.approx(L1)
        assert np.all(np.diff(vals) < 0)
    with pytest.raises(ValueError):
        optimize_rectangle(1.0, (2.0, 0.2))
    with pytest.raises(ValueError):
        rectangle_grid_search(1.0, (0.2, 2.0), objective="area")


def test_report(tmp_path):
    cell, L1, L2 = _rect_cell(34)
    rep = conductivity_report(cell, s=1.0, c=1.0, rectangle=(L1, L2), geometry={"preset": "square"})
    assert rep["bound_holds"]
    assert rep["theta_1_exact"] == rectangle_eigenvalue(L1, L2)
    assert rep["parameters"]["p"] == pytest.approx(cell.pore.mean())
    assert rep["sigma_estimate"] == conductivity_estimate(
        cell.pore.mean(), cell.epsilon, 1.0, rep["theta_1"], 1.0)
    path = tmp_path / "c.json"
    write_report(path, rep)
    assert json.loads(path.read_text())["geometry"] == {"preset": "square"}
