"""Periodic corrector problems on voxel reference cells.

Both corrector families are solved with one cell-centred finite-volume
kernel.  For a scalar coefficient ``k`` the face coefficient is the harmonic
mean of the two neighbouring voxels, so layered media reproduce the exact
harmonic-mean effective coefficient.  The discrete operator is

    (A u)_i = sum_faces  k_f * (A_f / h_f) * (u_i - u_j)

and a problem ``-div(k grad u) = f`` is solved as ``A u = |V_i| f``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import CompatibilityError, SolverError
from .geometry import ReferenceCell

logger = logging.getLogger(__name__)

ION = "ION"
POTENTIAL = "POTENTIAL"
PORE_ONLY = "PORE_ONLY"
FULL_CELL = "FULL_CELL"

DEFAULT_TOL = 1e-10
COMPAT_TOL = 1e-10


def face_coefficients(coeff: np.ndarray) -> tuple:
    """Harmonic face averages ``2ab/(a+b)`` per axis (0 where ``a+b = 0``).

    ``out[k][i]`` belongs to the face between voxel ``i`` and ``i + e_k``.
    """
    coeff = np.asarray(coeff, dtype=float)
    out = []
    for k in range(coeff.ndim):
        b = np.roll(coeff, -1, axis=k)
        s = coeff + b
        with np.errstate(invalid="ignore", divide="ignore"):
            kf = np.where(s > 0, 2.0 * coeff * b / np.where(s > 0, s, 1.0), 0.0)
        out.append(kf)
    return tuple(out)


@dataclass
class EllipticOperator:
    """Assembled periodic diffusion operator on the active voxels.

    Attributes
    ----------
    matrix : scipy.sparse.csr_matrix
        Symmetric positive semidefinite operator on the active unknowns.
    active : ndarray of bool
        Voxels carrying an unknown.
    labels : ndarray of int
        Connected-component label of every active unknown.
    singular : ndarray of bool
        Per component: True if the component has no Dirichlet contribution
        and therefore a constant null vector.
    voxel_volume : float
    """

    matrix: sp.csr_matrix
    active: np.ndarray
    labels: np.ndarray
    singular: np.ndarray
    voxel_volume: float
    _lu: object = field(default=None, repr=False)

    @property
    def n_components(self) -> int:
        return len(self.singular)

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Return ``A u`` on the full grid (zero off the active set)."""
        out = np.zeros(self.active.shape)
        out[self.active] = self.matrix @ u[self.active]
        return out

    def project(self, vec: np.ndarray) -> np.ndarray:
        """Subtract per-component means on singular components."""
        vec = vec.copy()
        counts = np.bincount(self.labels, minlength=self.n_components)
        means = np.bincount(self.labels, weights=vec, minlength=self.n_components) / counts
        means[~self.singular] = 0.0
        vec -= means[self.labels]
        return vec

    def _factor(self):
        if self._lu is None:
            n = self.matrix.shape[0]
            pins = [int(np.flatnonzero(self.labels == c)[0]) for c in np.flatnonzero(self.singular)]
            keep = np.setdiff1d(np.arange(n), pins)
            A = self.matrix[keep][:, keep].tocsc()
            try:
                self._lu = (spla.splu(A), keep)
            except RuntimeError as exc:
                raise SolverError(f"sparse LU failed: {exc}") from exc
        return self._lu

    def solve(
        self,
        rhs: np.ndarray,
        tol: float = DEFAULT_TOL,
        maxiter: int | None = None,
        method: Literal["cg", "direct"] = "cg",
        check_compatibility: bool = True,
    ) -> tuple[np.ndarray, dict]:
        """Solve ``A u = |V| rhs`` and return ``(u_full, info)``.

        On singular components the right-hand side must have zero mean (up
        to :data:`COMPAT_TOL`); it is then projected exactly and the
        solution is made mean-free per component.
        """
        rhs = np.asarray(rhs, dtype=float)
        b = self.voxel_volume * rhs[self.active]
        if check_compatibility and self.singular.any():
            counts = np.bincount(self.labels, minlength=self.n_components)
            means = np.bincount(self.labels, weights=rhs[self.active],
                                minlength=self.n_components) / counts
            scale = max(1.0, float(np.abs(rhs[self.active]).mean()))
            bad = self.singular & (np.abs(means) > COMPAT_TOL * scale)
            if bad.any():
                raise CompatibilityError(
                    f"right-hand side mean {means[bad].max():.3e} violates solvability "
                    f"on {int(bad.sum())} floating component(s)")
        b = self.project(b)
        n = b.size
        info = {"iterations": 0, "residual": 0.0, "method": method}
        u = np.zeros(self.active.shape)
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            return u, info
        if method == "direct":
            lu, keep = self._factor()
            x = np.zeros(n)
            x[keep] = lu.solve(b[keep])
        elif method == "cg":
            d = self.matrix.diagonal()
            d = np.where(d > 0, d, 1.0)
            M = spla.LinearOperator((n, n), matvec=lambda v: v / d, dtype=float)
            if maxiter is None:
                maxiter = int(50 * np.ceil(self.active.size ** (1.0 / self.active.ndim)))
            count = [0]

            def cb(_):
                count[0] += 1

            x, flag = spla.cg(self.matrix, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M,
                              callback=cb)
            info["iterations"] = count[0]
            res = np.linalg.norm(b - self.matrix @ x) / bnorm
            if flag != 0 and res > tol:
                raise SolverError(
                    f"CG did not converge in {maxiter} iterations (relative residual {res:.3e})",
                    residual=res)
        else:
            raise ValueError(f"unknown method {method!r}")
        x = self.project(x)
        info["residual"] = float(np.linalg.norm(b - self.matrix @ x) / bnorm)
        u[self.active] = x
        return u, info


def build_operator(
    coeff: np.ndarray,
    mask: np.ndarray | None = None,
    spacing: Sequence[float] | None = None,
    interface: Literal["neumann", "dirichlet"] = "neumann",
    face_coeff: Sequence[np.ndarray] | None = None,
) -> EllipticOperator:
    """Assemble the periodic FV operator for ``-div(coeff grad u)``.

    Parameters
    ----------
    coeff : ndarray
        Voxel coefficient.
    mask : ndarray of bool, optional
        Active voxels; defaults to ``coeff > 0``.
    spacing : sequence of float, optional
        Voxel edge lengths; defaults to a unit cell.
    interface : {"neumann", "dirichlet"}
        Treatment of faces between active and inactive voxels: omitted
        (homogeneous Neumann) or homogeneous Dirichlet on the face, using a
        ghost value at half a voxel distance.
    face_coeff : sequence of ndarray, optional
        Precomputed face coefficients; harmonic means of ``coeff`` otherwise.
    """
    coeff = np.asarray(coeff, dtype=float)
    shape = coeff.shape
    d = coeff.ndim
    h = np.asarray(spacing if spacing is not None else 1.0 / np.asarray(shape), dtype=float)
    vol = float(np.prod(h))
    active = np.asarray(mask, bool) if mask is not None else coeff > 0
    kf = face_coefficients(coeff) if face_coeff is None else face_coeff
    n = int(active.sum())
    index = -np.ones(shape, dtype=np.int64)
    index[active] = np.arange(n)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    dirichlet = np.zeros(n, dtype=bool)
    for k in range(d):
        t = kf[k] * vol / h[k] ** 2
        nb_active = np.roll(active, -1, axis=k)
        nb_index = np.roll(index, -1, axis=k)
        both = active & nb_active & (t > 0)
        i, j, tv = index[both], nb_index[both], t[both]
        rows += [i, j]
        cols += [j, i]
        vals += [-tv, -tv]
        np.add.at(diag, i, tv)
        np.add.at(diag, j, tv)
        if interface == "dirichlet":
            tg = 2.0 * coeff * vol / h[k] ** 2
            # face on the + side of an active voxel
            lo = active & ~nb_active
            np.add.at(diag, index[lo], tg[lo])
            dirichlet[index[lo]] = True
            # face on the - side of an active voxel
            hi = active & ~np.roll(active, 1, axis=k)
            np.add.at(diag, index[hi], tg[hi])
            dirichlet[index[hi]] = True
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    ncomp, labels = connected_components(A, directed=False)
    has_dirichlet = np.bincount(labels, weights=dirichlet.astype(float), minlength=ncomp) > 0
    return EllipticOperator(A, active, labels, ~has_dirichlet, vol)


def elliptic_solve_periodic(
    coeff: np.ndarray,
    rhs: np.ndarray,
    mask: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    spacing: Sequence[float] | None = None,
    method: Literal["cg", "direct"] = "cg",
    maxiter: int | None = None,
) -> np.ndarray:
    """Solve ``-div(coeff grad u) = rhs`` periodically with zero mean.

    Parameters
    ----------
    coeff, rhs : ndarray
        Voxel fields of equal shape.
    mask : ndarray of bool, optional
        Restrict the problem to these voxels with homogeneous Neumann
        conditions on the boundary of the mask.
    tol : float
        Relative residual tolerance.

    Returns
    -------
    ndarray
        Solution on the full grid, zero outside ``mask``.

    Raises
    ------
    CompatibilityError
        If ``rhs`` has nonzero mean over a connected component.
    SolverError
        If the iteration cap is reached.
    """
    op = build_operator(coeff, mask=mask, spacing=spacing)
    u, _ = op.solve(rhs, tol=tol, maxiter=maxiter, method=method)
    return u


@dataclass(frozen=True, eq=False)
class CorrectorField:
    """Periodic zero-mean corrector on a reference cell.

    Attributes
    ----------
    values : ndarray
        Voxel values; zero outside ``mask``.
    family : {"ION", "POTENTIAL"}
    direction : int
        Zero-based axis index of the unit macroscopic gradient.
    domain : {"PORE_ONLY", "FULL_CELL"}
    mask : ndarray of bool
        Voxels carrying unknowns.  For a POTENTIAL corrector with
        ``alpha = 0`` the solid unknowns are dropped, so this is the pore.
    cell : ReferenceCell
    xi33 : CorrectorField or None
        For ION correctors, the potential corrector supplying the interface
        data.
    residual : float
    iterations : int
    """

    values: np.ndarray
    family: str
    direction: int
    domain: str
    mask: np.ndarray
    cell: ReferenceCell
    xi33: "CorrectorField | None" = None
    residual: float = 0.0
    iterations: int = 0

    def mean(self) -> float:
        return float(self.values[self.mask].mean())

    def to_csv(self, path) -> None:
        """Dump ``(i, j, [k], xi_value)`` rows for the active voxels."""
        write_corrector_csv(self, path)


def permittivity_field(cell: ReferenceCell) -> np.ndarray:
    """Voxel coefficient ``eps^2`` in the pore and ``alpha`` in the solid."""
    return np.where(cell.pore, cell.epsilon ** 2, cell.alpha)


def _affine_rhs(kf, spacing, r):
    """``-div_h(k_f e_r)`` for a direction vector ``r``."""
    rhs = np.zeros(kf[0].shape)
    for k, w in enumerate(r):
        if w != 0:
            rhs -= w * (kf[k] - np.roll(kf[k], 1, axis=k)) / spacing[k]
    return rhs


def _direction(r, d):
    if np.ndim(r) == 0:
        r = int(r)
        if not 0 <= r < d:
            raise ValueError(f"direction {r} out of range for a {d}D cell")
        vec = np.zeros(d)
        vec[r] = 1.0
        return r, vec
    vec = np.asarray(r, dtype=float)
    if vec.shape != (d,):
        raise ValueError("direction vector has the wrong length")
    return -1, vec


def _check_components(op: EllipticOperator, what: str):
    if op.n_components > 1:
        logger.warning("%s: active phase splits into %d disconnected components; "
                       "each is made mean-free separately", what, op.n_components)


def solve_potential_corrector(
    cell: ReferenceCell,
    r,
    tol: float = DEFAULT_TOL,
    method: Literal["cg", "direct"] = "cg",
    maxiter: int | None = None,
) -> CorrectorField:
    """Potential corrector ``xi^33_r`` on the whole cell.

    Solves ``-div(k grad xi) = -div(k e_r)`` with ``k = eps^2`` in the pore
    and ``alpha`` in the solid.  With ``alpha = 0`` the solid unknowns are
    dropped and the pore problem carries homogeneous Neumann conditions on
    the interface.

    Parameters
    ----------
    cell : ReferenceCell
    r : int or array_like
        Zero-based axis index, or a general direction vector.
    tol : float
        Relative residual tolerance.
    """
    direction, vec = _direction(r, cell.ndim)
    coeff = permittivity_field(cell)
    mask = coeff > 0
    kf = face_coefficients(coeff)
    op = build_operator(coeff, mask=mask, spacing=cell.spacing, face_coeff=kf)
    _check_components(op, "potential corrector")
    rhs = _affine_rhs(kf, cell.spacing, vec)
    u, info = op.solve(rhs, tol=tol, method=method, maxiter=maxiter)
    logger.debug("potential corrector r=%s: %d iterations, residual %.2e",
                 r, info["iterations"], info["residual"])
    return CorrectorField(_frozen(u), POTENTIAL, direction, FULL_CELL, _frozen(mask), cell,
                          residual=info["residual"], iterations=info["iterations"])


def solve_ion_corrector(
    cell: ReferenceCell,
    r,
    xi33: CorrectorField,
    tol: float = DEFAULT_TOL,
    method: Literal["cg", "direct"] = "cg",
    maxiter: int | None = None,
) -> CorrectorField:
    """Ion corrector ``xi^ii_r`` on the pore phase.

    Solves the pore Laplace problem whose interface flux of ``xi - y_r``
    matches that of ``xi33 - y_r``; discretely ``L u = L xi33`` with the
    pore Neumann Laplacian ``L``.
    """
    direction, vec = _direction(r, cell.ndim)
    if xi33.family != POTENTIAL:
        raise ValueError("xi33 must be a POTENTIAL corrector")
    if xi33.cell is not cell and not (
        xi33.cell.dims == cell.dims and np.array_equal(xi33.cell.phase, cell.phase)
    ):
        raise ValueError("xi33 was computed on a different cell")
    if xi33.direction != direction:
        raise ValueError(f"xi33 direction {xi33.direction} does not match r={direction}")
    pore = cell.pore
    op = build_operator(pore.astype(float), mask=pore, spacing=cell.spacing)
    _check_components(op, "ion corrector")
    rhs = op.apply(xi33.values) / op.voxel_volume
    u, info = op.solve(rhs, tol=tol, method=method, maxiter=maxiter)
    return CorrectorField(_frozen(u), ION, direction, PORE_ONLY, _frozen(pore), cell,
                          xi33=xi33, residual=info["residual"], iterations=info["iterations"])


def solve_correctors(cell: ReferenceCell, tol: float = DEFAULT_TOL, method="cg"):
    """Both corrector families for every axis: ``(xi33_list, xiii_list)``."""
    xi33 = [solve_potential_corrector(cell, r, tol, method) for r in range(cell.ndim)]
    xiii = [solve_ion_corrector(cell, r, xi33[r], tol, method) for r in range(cell.ndim)]
    return xi33, xiii


def write_corrector_csv(c: CorrectorField, path) -> None:
    idx = np.argwhere(c.mask)
    names = ["i", "j", "k"][: c.values.ndim]
    lines = [",".join(names + ["xi_value"])]
    vals = c.values[c.mask]
    lines += [",".join(map(str, row)) + f",{v!r}" for row, v in zip(idx.tolist(), vals.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a
