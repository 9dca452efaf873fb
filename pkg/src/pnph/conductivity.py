"""Spectral conductivity estimates for pore geometries.

The first Dirichlet eigenvalue ``theta_1`` of the Laplacian on the pore
phase controls the effective conductivity through

    sigma_11 ~ p (eps^2 theta_1 / s^2 + c),

and the Cheeger number ``h`` of the pore gives ``theta_1 >= (h/2)^2``.

Rectangles are described by their full side lengths ``L1 x L2``.  In that
form the Cheeger number is

    h = (4 - pi) / (L1 + L2 - sqrt((L1 - L2)^2 + pi L1 L2)),

which gives ``2 + sqrt(pi)`` for the unit square.  Formulas written for the
half-width rectangle ``[-a, a] x [-b, b]`` follow with ``L1 = 2a``,
``L2 = 2b``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .cell_solver import build_operator
from .errors import GeometryError, SolverError
from .geometry import ReferenceCell

logger = logging.getLogger(__name__)

EIG_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EigenResult:
    """First Dirichlet eigenpair of the pore phase.

    Attributes
    ----------
    theta_1 : float
    u_1 : ndarray
        Eigenfunction on the voxel grid, zero on the solid, positive in the
        pore and of unit discrete L2 norm.
    residual : float
        Discrete L2 norm of ``-Lap u - theta u``.
    iterations : int
    """

    theta_1: float
    u_1: np.ndarray
    residual: float
    iterations: int = 0


def first_dirichlet_eigenvalue(cell: ReferenceCell, tol: float = EIG_TOL,
                               maxiter: int = 500) -> EigenResult:
    """Smallest eigenvalue of ``-Lap`` on the pore with ``u = 0`` on the solid.

    Inverse power iteration (shift 0) with a sparse LU of the Dirichlet
    pore operator.  Stops once the Rayleigh quotient changes by less than
    ``tol`` relative and the residual is below ``tol * theta``.

    Raises
    ------
    GeometryError
        If the pore phase is empty or touches no solid (no Dirichlet face).
    SolverError
        If the iteration does not converge within ``maxiter`` steps.
    """
    pore = cell.pore
    if not pore.any():
        raise GeometryError("empty pore phase")
    op = build_operator(pore.astype(float), mask=pore, spacing=cell.spacing, interface="dirichlet")
    if op.singular.any():
        raise GeometryError("a pore component has no pore-solid interface; "
                            "the Dirichlet eigenproblem is singular there")
    vol = op.voxel_volume
    A = op.matrix.tocsc()
    lu = spla.splu(A)
    n = A.shape[0]
    u = np.ones(n)
    u /= math.sqrt(vol * float(u @ u))
    theta_old = np.inf
    for it in range(1, maxiter + 1):
        w = lu.solve(vol * u)
        u = w / math.sqrt(vol * float(w @ w))
        Au = A @ u / vol
        theta = float(u @ Au) * vol
        residual = math.sqrt(vol * float(np.sum((Au - theta * u) ** 2)))
        if abs(theta - theta_old) <= tol * theta and residual <= tol * theta:
            break
        theta_old = theta
    else:
        raise SolverError(f"inverse iteration did not converge in {maxiter} steps",
                          residual=residual)
    if u.sum() < 0:
        u = -u
    field = np.zeros(cell.dims)
    field[pore] = u
    field.setflags(write=False)
    logger.debug("theta_1 = %.10g after %d iterations", theta, it)
    return EigenResult(theta, field, residual, it)


def rectangle_eigenvalue(L1: float, L2: float) -> float:
    """``pi^2 (1/L1^2 + 1/L2^2)``, the first Dirichlet eigenvalue of a rectangle."""
    return math.pi ** 2 * (1.0 / L1 ** 2 + 1.0 / L2 ** 2)


def cheeger_rectangle(L1: float, L2: float) -> float:
    """Cheeger number of the ``L1 x L2`` rectangle (full side lengths)."""
    if not (L1 > 0 and L2 > 0):
        raise ValueError("rectangle sides must be positive")
    den = L1 + L2 - math.sqrt((L1 - L2) ** 2 + math.pi * L1 * L2)
    return (4.0 - math.pi) / den


def cheeger_lower_bound(h: float) -> float:
    """Lower bound ``(h/2)^2`` on the first Dirichlet eigenvalue."""
    return (h / 2.0) ** 2


def conductivity_estimate(p: float, epsilon: float, s: float, theta_1: float, c: float) -> float:
    """First-mode conductivity ``p (eps^2 theta_1 / s^2 + c)``.

    ``s`` is the ratio of pore to macroscopic length (the period scale).
    """
    if s == 0:
        raise ZeroDivisionError("s must be nonzero")
    if p <= 0 or epsilon < 0 or theta_1 <= 0 or c < 0:
        raise ValueError("need p > 0, epsilon >= 0, theta_1 > 0, c >= 0")
    return p * (epsilon ** 2 * theta_1 / s ** 2 + c)


def optimize_rectangle(L2_fixed: float, L1_range, p: float = 1.0, epsilon: float = 1.0,
                       s: float = 1.0, c: float = 0.0) -> tuple:
    """Channel height maximizing the Cheeger-bound conductivity estimate.

    ``h(L1, L2)`` decreases in ``L1``, so the optimum is the lower end of
    ``L1_range``.

    Returns
    -------
    (L1_opt, sigma_opt) : tuple of float
        ``sigma_opt`` uses ``theta_1 = (h/2)^2``.
    """
    lo, hi = (float(v) for v in L1_range)
    if not 0 < lo <= hi:
        raise ValueError("L1_range must be a nonempty interval of positive lengths")
    bound = cheeger_lower_bound(cheeger_rectangle(lo, L2_fixed))
    return lo, conductivity_estimate(p, epsilon, s, bound, c)


def rectangle_grid_search(L2_fixed: float, L1_range, num: int = 19, objective: str = "eigenvalue"):
    """Grid search over ``L1`` for validation of :func:`optimize_rectangle`.

    ``objective`` is ``"eigenvalue"`` (exact rectangle eigenvalue) or
    ``"cheeger"`` (the bound).  Returns ``(L1_best, values, L1_grid)``.
    """
    lo, hi = (float(v) for v in L1_range)
    grid = np.linspace(lo, hi, num)
    if objective == "eigenvalue":
        vals = np.array([rectangle_eigenvalue(L, L2_fixed) for L in grid])
    elif objective == "cheeger":
        vals = np.array([cheeger_lower_bound(cheeger_rectangle(L, L2_fixed)) for L in grid])
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return float(grid[int(np.argmax(vals))]), vals, grid


def conductivity_report(cell: ReferenceCell, p: float | None = None, epsilon: float | None = None,
                        s: float = 1.0, c: float = 1.0, rectangle=None, tol: float = EIG_TOL,
                        geometry: dict | None = None) -> dict:
    """Eigenvalue, Cheeger data and conductivity estimate for one cell.

    ``rectangle=(L1, L2)`` adds the analytic Cheeger number and bound.
    ``p`` and ``epsilon`` default to the cell's porosity and Debye length.
    """
    eig = first_dirichlet_eigenvalue(cell, tol=tol)
    p = float(cell.pore.mean()) if p is None else p
    epsilon = cell.epsilon if epsilon is None else epsilon
    out = {
        "theta_1": eig.theta_1,
        "residual": eig.residual,
        "iterations": eig.iterations,
        "sigma_estimate": conductivity_estimate(p, epsilon, s, eig.theta_1, c),
        "parameters": {"p": p, "epsilon": epsilon, "s": s, "c": c},
        "geometry": dict(geometry or {}),
    }
    if rectangle is not None:
        L1, L2 = rectangle
        h = cheeger_rectangle(L1, L2)
        out["cheeger_h"] = h
        out["bound"] = cheeger_lower_bound(h)
        out["theta_1_exact"] = rectangle_eigenvalue(L1, L2)
        out["bound_holds"] = bool(eig.theta_1 >= out["bound"])
    return out


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
