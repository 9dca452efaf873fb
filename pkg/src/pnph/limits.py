"""Reduced models: thin and thick double layers, thin films, ambipolar diffusion.

All models run on a :class:`~pnph.macro_solver.MacroGrid` and reuse the
macro finite-volume faces, so their outputs are directly comparable with
:func:`~pnph.macro_solver.step_macro_pnp`.

Salt and charge are the half sum and half difference of the species,
``c = (c+ + c-)/2`` and ``rho = (c+ - c-)/2``.  Electroneutrality of the
composite, ``p (c+ - c-) + rho_s = 0``, therefore reads
``rho = -rho_s / (2p)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import CompatibilityError, ConfigError, PhysicalRegimeError, SolverError
from .macro_solver import (BoundarySpec, MacroGrid, MacroState, build_macro_graph,
                           step_macro_pnp)
from .tensors import EffectiveTensors

logger = logging.getLogger(__name__)

MODELS = ("thin_dl", "membrane", "thin_film", "ambipolar")


class DepletionError(PhysicalRegimeError):
    """Salt concentration reached zero: the electroneutral model breaks down."""


# ---------------------------------------------------------------------------
# helpers


def _laplacian(n, i, j, T, diag_extra=None):
    diag = np.bincount(i, T, n) + np.bincount(j, T, n)
    if diag_extra is not None:
        diag = diag + diag_extra
    return sp.coo_matrix((np.concatenate([-T, -T, diag]),
                          (np.concatenate([i, j, np.arange(n)]),
                           np.concatenate([j, i, np.arange(n)]))), shape=(n, n)).tocsr()


def _solve_gauged(A, b, n, i, j, anchored_cells, volume, ref, what):
    """Solve ``A x = b`` where components without anchored cells float.

    Floating components must have ``sum(b) = 0``; their gauge keeps the
    volume mean of ``ref``.
    """
    G = sp.coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    nc, labels = connected_components(G, directed=False)
    anchored = np.zeros(nc, bool)
    anchored[labels[anchored_cells]] = True
    floating = ~anchored
    if floating.any():
        tot = np.bincount(labels, b, nc)
        mag = np.bincount(labels, np.abs(b), nc)
        bad = floating & (np.abs(tot) > 1e-9 * mag + 1e-14)
        if bad.any():
            raise CompatibilityError(f"{what}: net source {tot[bad][0]:.3e} on a region "
                                     "without a Dirichlet face")
    _, first = np.unique(labels, return_index=True)
    pins = first[floating]
    keep = np.ones(n, bool)
    keep[pins] = False
    x = np.zeros(n)
    if keep.any():
        x[keep] = spla.spsolve(A[keep][:, keep].tocsc(), b[keep])
    if floating.any():
        vol = np.bincount(labels, volume, nc)
        mean = np.bincount(labels, volume * x, nc) / vol
        target = np.bincount(labels, volume * np.broadcast_to(ref, n), nc) / vol
        x += np.where(floating, target - mean, 0.0)[labels]
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{what}: linear solve produced non-finite values")
    return x


def _grid_of(grid, t):
    if grid is None:
        raise ConfigError("a MacroGrid is required")
    if grid.ndim > t.ndim:
        raise ConfigError("grid has more axes than the tensors")
    return grid


# ---------------------------------------------------------------------------
# thin double layers


@dataclass
class ThinDLTrajectory:
    """Output of :func:`thin_dl_solve`.

    ``c`` and ``rho`` are salt and charge in half-sum/half-difference
    variables; ``c_plus``/``c_minus`` recover the species.
    """

    grid: MacroGrid
    times: list = field(default_factory=list)
    c: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    rho: np.ndarray = None
    current_residuals: list = field(default_factory=list)

    def c_plus(self, k: int = -1) -> np.ndarray:
        return self.c[k] + self.rho

    def c_minus(self, k: int = -1) -> np.ndarray:
        return self.c[k] - self.rho

    def state(self, k: int = -1) -> MacroState:
        return MacroState(self.grid, self.c_plus(k), self.c_minus(k), self.phi[k], self.times[k])


class _ThinDL:
    def __init__(self, grid, t, bc, rho_s):
        g = build_macro_graph(grid, t, rho_s)
        self.g, self.rb, self.grid = g, g.resolve(bc), grid
        self.rho = -g.fixed_charge / (2.0 * g.q_weight)
        self.cD = 0.5 * (self.rb.s_cplus + self.rb.s_cminus)

    def current_system(self, c):
        """Matrix and source of ``div(c M grad phi) = -div(D grad rho)``."""
        g, rb = self.g, self.rb
        n = g.n_s
        i, j, T, r = g.sf_i, g.sf_j, g.sf_T, g.sf_r
        cf = 0.5 * (c[i] + c[j])
        Tm = T * r * cf
        dm = rb.s_dirichlet
        cell = g.sb_cell[dm]
        Tb = g.sb_T[dm] * g.sb_r[dm] * self.cD[dm]
        A = _laplacian(n, i, j, Tm, np.bincount(cell, Tb, n))
        # charge flux i -> j is T (rho_i - rho_j) + Tm (phi_i - phi_j); ghost rho equals the cell value
        b = -(np.bincount(i, T * (self.rho[i] - self.rho[j]), n)
              - np.bincount(j, T * (self.rho[i] - self.rho[j]), n))
        b += np.bincount(cell, Tb * rb.s_phi[dm], n)
        b += np.bincount(g.sb_cell, 0.5 * rb.s_current * g.sb_area, n)
        return A, b, i[Tm > 0], j[Tm > 0], cell

    def solve_phi(self, c, phi_ref):
        A, b, i, j, anchored = self.current_system(c)
        phi = _solve_gauged(A, b, self.g.n_s, i, j, anchored, self.g.volume, phi_ref,
                            "thin-DL current equation")
        return phi, float(np.abs(A @ phi - b).max())

    def salt_step(self, c_old, phi, dt):
        g, rb = self.g, self.rb
        n = g.n_s
        i, j, T, r = g.sf_i, g.sf_j, g.sf_T, g.sf_r
        dm = rb.s_dirichlet
        cell = g.sb_cell[dm]
        Tb = g.sb_T[dm]
        A = _laplacian(n, i, j, T, g.capacity / dt + np.bincount(cell, Tb, n))
        rf = 0.5 * (self.rho[i] + self.rho[j])
        drift = T * r * rf * (phi[i] - phi[j])
        b = g.capacity / dt * c_old - np.bincount(i, drift, n) + np.bincount(j, drift, n)
        b += np.bincount(cell, Tb * self.cD[dm], n)
        b -= np.bincount(cell, Tb * g.sb_r[dm] * self.rho[cell] * (phi[cell] - rb.s_phi[dm]), n)
        return spla.spsolve(A.tocsc(), b)


def thin_dl_solve(grid: MacroGrid, c0, t: EffectiveTensors, bc: BoundarySpec | None = None,
                  dt: float = 1e-2, steps: int = 1, rho_s=None, phi0=None,
                  implicit: bool = True, tol: float = 1e-12, maxiter: int = 200
                  ) -> ThinDLTrajectory:
    """Electroneutral thin-double-layer model.

    Solves, with ``rho = -rho_s/(2p)`` frozen,

        0        = div(D grad rho + c M grad phi)
        p dc/dt  = div(D grad c + rho M grad phi)

    For uniform ``rho_s`` the first equation is the conductivity-weighted
    Laplace problem ``div(c M grad phi) = 0``.

    Parameters
    ----------
    grid : MacroGrid
    c0 : float or ndarray
        Initial salt (half the total ion concentration), positive.
    t : EffectiveTensors
        Diagonal in the grid axes.
    bc : BoundarySpec, optional
        DIRICHLET faces fix the salt ``(c+ + c-)/2`` and ``phi``;
        APPLIED_CURRENT faces carry the charge flux and no salt flux.
    dt, steps : float, int
    rho_s : float or ndarray, optional
        Overrides ``t.rho_s``.
    phi0 : ndarray, optional
        Gauge reference for floating potentials (zero mean by default).
    implicit : bool
        Picard-iterate the two equations to the backward-Euler solution
        (default); otherwise ``phi`` lags one step.
    tol, maxiter : float, int
        Picard stopping rule on the max salt update.

    Raises
    ------
    DepletionError
        If the salt concentration reaches zero somewhere.
    """
    bc = bc or BoundarySpec()
    if not dt > 0 or steps < 0:
        raise ValueError("dt must be positive and steps non-negative")
    m = _ThinDL(_grid_of(grid, t), t, bc, rho_s)
    c = np.broadcast_to(np.asarray(c0, float), grid.shape).ravel().copy()
    _check_depletion(c, m.rho, 0.0)
    ref = np.zeros(grid.size) if phi0 is None else np.asarray(phi0, float).ravel()
    phi, res = m.solve_phi(c, ref)
    out = ThinDLTrajectory(grid, rho=m.rho.reshape(grid.shape))
    shape = grid.shape
    out.times.append(0.0)
    out.c.append(c.reshape(shape).copy())
    out.phi.append(phi.reshape(shape))
    out.current_residuals.append(res)
    for k in range(steps):
        if implicit:
            c_it = c
            for it in range(maxiter):
                phi, res = m.solve_phi(c_it, phi)
                c_new = m.salt_step(c, phi, dt)
                if not c_new.min() > 0:
                    # depleted iterates cut the conductivity graph; report the cause
                    _check_depletion(c_new, m.rho, (k + 1) * dt)
                delta = float(np.abs(c_new - c_it).max())
                c_it = c_new
                if delta <= tol * max(1.0, float(np.abs(c_new).max())):
                    break
            else:
                raise SolverError(f"thin-DL Picard iteration stalled at step {k}", residual=delta)
            c = c_it
            _check_depletion(c, m.rho, (k + 1) * dt)
            phi, res = m.solve_phi(c, phi)
        else:
            c = m.salt_step(c, phi, dt)
            _check_depletion(c, m.rho, (k + 1) * dt)
            phi, res = m.solve_phi(c, phi)
        out.times.append((k + 1) * dt)
        out.c.append(c.reshape(shape).copy())
        out.phi.append(phi.reshape(shape))
        out.current_residuals.append(res)
    return out


def _check_depletion(c, rho, time):
    k = int(np.argmin(c))
    if not c[k] > 0:
        raise DepletionError(f"salt depleted ({c[k]:.3e}) at node {k}, t = {time:g}", node=k)
    bad = c < np.abs(rho)
    if bad.any():
        logger.warning("co-ion concentration negative at %d nodes (t = %g); "
                       "thin-DL model outside its range", int(bad.sum()), time)


# ---------------------------------------------------------------------------
# thick double layers


def membrane_tensors(t: EffectiveTensors, eps_bar: float, tol: float = 1e-10) -> EffectiveTensors:
    """Tensors of the membrane limit: ``M = D`` and ``eps = eps_bar^2 D``."""
    scale = max(1.0, float(np.abs(t.D_hat).max()))
    if np.abs(t.D_hat - t.M_hat).max() > tol * scale:
        raise ConfigError("membrane limit needs D_hat == M_hat (insulating matrix, alpha = 0)")
    if not eps_bar > 0:
        raise ConfigError("eps_bar must be positive")
    return replace(t, M_hat=t.D_hat, eps_hat=eps_bar ** 2 * t.D_hat)


def membrane_step(state: MacroState, t: EffectiveTensors, eps_bar: float,
                  bc: BoundarySpec | None = None, dt: float = 1e-2,
                  mode: str = "implicit", rho_s=None) -> MacroState:
    """One step of the thick-double-layer (membrane) system.

    Equivalent to :func:`step_macro_pnp` with ``M = D`` and
    ``eps = eps_bar^2 D``; ``eps_bar`` is the Debye length relative to the
    macroscopic length.
    """
    return step_macro_pnp(state, membrane_tensors(t, eps_bar), bc or BoundarySpec(), dt,
                          mode=mode, rho_s=rho_s)


def thin_film_potential(grid: MacroGrid, t: EffectiveTensors, bc: BoundarySpec) -> np.ndarray:
    """Potential of the thin-film limit, ``div(D grad phi) = 0``.

    DIRICHLET faces fix ``phi``; every other face is insulating.  Each
    connected region must touch a Dirichlet face.
    """
    g = build_macro_graph(_grid_of(grid, t), t)
    rb = g.resolve(bc)
    n = g.n_s
    dm = rb.s_dirichlet
    if not dm.any():
        raise ConfigError("thin-film potential needs a DIRICHLET face (all-Neumann is not unique)")
    cell = g.sb_cell[dm]
    A = _laplacian(n, g.sf_i, g.sf_j, g.sf_T, np.bincount(cell, g.sb_T[dm], n))
    b = np.bincount(cell, g.sb_T[dm] * rb.s_phi[dm], n)
    G = sp.coo_matrix((np.ones(len(g.sf_i)), (g.sf_i, g.sf_j)), shape=(n, n))
    nc, labels = connected_components(G, directed=False)
    if np.setdiff1d(np.arange(nc), labels[cell]).size:
        raise ConfigError("some region has no DIRICHLET face; its potential is not unique")
    return spla.spsolve(A.tocsc(), b).reshape(grid.shape)


# ---------------------------------------------------------------------------
# ambipolar diffusion


@dataclass(frozen=True)
class AmbipolarCoefficients:
    """Effective salt diffusivity ``D_bar`` and valence ``z_bar``.

    Charge numbers are magnitudes: the anion carries ``-z_minus e``.
    """

    D_bar: float
    z_bar: float
    z_plus: float
    z_minus: float
    D_plus: float
    D_minus: float
    M_plus: float
    M_minus: float
    kT: float = 1.0


def ambipolar_coefficients(z_plus, z_minus, D_plus, D_minus, M_plus, M_minus,
                           kT: float = 1.0) -> AmbipolarCoefficients:
    """Ambipolar coefficients of a binary electrolyte.

    ``D_bar = (z+ M+ D- + z- M- D+) / (z+ M+ + z- M-)`` and
    ``z_bar = 2 z+ z- M+ M- kT / (z+ D- M+ + z- D+ M-)``.
    """
    vals = dict(z_plus=z_plus, z_minus=z_minus, D_plus=D_plus, D_minus=D_minus,
                M_plus=M_plus, M_minus=M_minus, kT=kT)
    for k, v in vals.items():
        if not (np.isfinite(v) and v > 0):
            raise ValueError(f"{k} must be positive, got {v}")
    den_d = z_plus * M_plus + z_minus * M_minus
    den_z = z_plus * D_minus * M_plus + z_minus * D_plus * M_minus
    if den_d == 0 or den_z == 0:
        raise ZeroDivisionError("ambipolar denominators vanish")
    D_bar = (z_plus * M_plus * D_minus + z_minus * M_minus * D_plus) / den_d
    z_bar = 2.0 * z_plus * z_minus * M_plus * M_minus * kT / den_z
    return AmbipolarCoefficients(float(D_bar), float(z_bar), **{k: float(v) for k, v in vals.items()})


def ambipolar_salt(C_plus, C_minus, coeffs: AmbipolarCoefficients, rho_s, p: float,
                   e: float = 1.0, tol: float = 1e-10) -> np.ndarray:
    """Ambipolar salt ``c = z+ C+ + z- C- + rho_s/(p e)`` of a quasi-neutral state.

    Raises ``ValueError`` if ``p e (z+ C+ - z- C-) + rho_s`` is not zero.
    """
    zp, zm = coeffs.z_plus, coeffs.z_minus
    C_plus, C_minus = np.asarray(C_plus, float), np.asarray(C_minus, float)
    defect = p * e * (zp * C_plus - zm * C_minus) + rho_s
    scale = np.maximum(1.0, np.abs(p * e * zp * C_plus))
    if np.any(np.abs(defect) > tol * scale):
        raise ValueError("state is not quasi-neutral")
    return zp * C_plus + zm * C_minus + np.asarray(rho_s, float) / (p * e)


def ambipolar_species(c, coeffs: AmbipolarCoefficients, rho_s, p: float, e: float = 1.0) -> tuple:
    """Species ``(C+, C-)`` of the quasi-neutral state with ambipolar salt ``c``."""
    c = np.asarray(c, float)
    r = np.asarray(rho_s, float) / (p * e)
    C_plus = (0.5 * c - r) / coeffs.z_plus
    C_minus = 0.5 * c / coeffs.z_minus
    if np.any(C_plus < 0) or np.any(C_minus < 0):
        raise PhysicalRegimeError("ambipolar salt too small for the fixed charge")
    return C_plus, C_minus


def ambipolar_step(grid: MacroGrid, c, coeffs: AmbipolarCoefficients, t: EffectiveTensors,
                   rho_s, phi_tilde, dt: float, e: float = 1.0,
                   bc: BoundarySpec | None = None) -> np.ndarray:
    """One backward-Euler step of the ambipolar diffusion equation.

        p dc/dt = D_bar div(D grad c) - (z_bar/e) div(rho_s D grad phi~)
                  - (D+ z_bar / (kT e z+ M+)) div(D grad rho_s)

    The equation is divided by ``p`` before assembly, so for straight
    channels (``D = p diag(1, 0)``) the update does not depend on ``p``.
    ``rho_s`` and ``phi~`` are frozen over the step; DIRICHLET faces fix
    ``c`` and the two source terms use the cell values as ghosts.
    """
    grid = _grid_of(grid, t)
    Dp = t.D_hat / t.p
    unit = EffectiveTensors(Dp, Dp, Dp, 1.0)
    g = build_macro_graph(grid, unit)
    rb = g.resolve(bc or BoundarySpec())
    n = g.n_s
    i, j, T = g.sf_i, g.sf_j, g.sf_T
    dm = rb.s_dirichlet
    cell = g.sb_cell[dm]
    Tb = g.sb_T[dm]
    Db = coeffs.D_bar
    vol = g.volume
    A = _laplacian(n, i, j, Db * T, vol / dt + np.bincount(cell, Db * Tb, n))
    rs = np.broadcast_to(np.asarray(rho_s, float), grid.shape).ravel()
    ph = np.broadcast_to(np.asarray(phi_tilde, float), grid.shape).ravel()
    c = np.broadcast_to(np.asarray(c, float), grid.shape).ravel()
    k_drift = coeffs.z_bar / e
    k_fix = coeffs.D_plus * coeffs.z_bar / (coeffs.kT * e * coeffs.z_plus * coeffs.M_plus)
    # outward flux i -> j of  -(k_drift rho_s grad phi + k_fix grad rho_s)
    flux = T * (k_drift * 0.5 * (rs[i] + rs[j]) * (ph[i] - ph[j]) + k_fix * (rs[i] - rs[j]))
    b = vol / dt * c + np.bincount(i, flux, n) - np.bincount(j, flux, n)
    b += np.bincount(cell, Db * Tb * 0.5 * (rb.s_cplus[dm] + rb.s_cminus[dm]), n)
    return spla.spsolve(A.tocsc(), b).reshape(grid.shape)
