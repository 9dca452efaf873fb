"""Upscaled Poisson-Nernst-Planck equations on structured macro grids.

Solves

    p dc+/dt = div(D grad c+ + c+ M grad phi)
    p dc-/dt = div(D grad c- - c- M grad phi)
    -div(eps grad phi) = p (c+ - c-) + rho_s

with cell-centred finite volumes and Scharfetter-Gummel fluxes.  Tensors
must be diagonal in the grid axes; rotate a general tensor first with
:func:`pnph.tensors.coordinate_transform`.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from ._fv import FACES, FVGraph, bernoulli
from .errors import ConfigError, PhysicalRegimeError, SolverError
from .tensors import EffectiveTensors

logger = logging.getLogger(__name__)

OFFDIAG_TOL = 1e-8


# ---------------------------------------------------------------------------
# grid, boundary conditions, state


@dataclass(frozen=True)
class MacroGrid:
    """Uniform cell-centred grid on ``[0, L1] x ... ``.

    Parameters
    ----------
    shape : tuple of int
        Cells per axis (1D or 2D; 3D is accepted for smoke tests).
    lengths : tuple of float, optional
        Domain edge lengths, unit by default.
    axes : tuple of int, optional
        Tensor axis used along each grid axis; ``(0, 1, ...)`` by default.
    """

    shape: tuple
    lengths: tuple = None
    axes: tuple = None

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if not 1 <= len(shape) <= 3 or min(shape) < 1:
            raise ConfigError(f"bad macro grid shape {shape}")
        object.__setattr__(self, "shape", shape)
        lengths = self.lengths if self.lengths is not None else (1.0,) * len(shape)
        object.__setattr__(self, "lengths", tuple(float(v) for v in np.atleast_1d(lengths)))
        axes = self.axes if self.axes is not None else tuple(range(len(shape)))
        object.__setattr__(self, "axes", tuple(int(a) for a in np.atleast_1d(axes)))
        if len(self.lengths) != len(shape) or len(self.axes) != len(shape):
            raise ConfigError("lengths and axes must match the grid dimension")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def centers(self) -> list:
        """Cell-centre coordinate arrays (``indexing='ij'``)."""
        h = self.spacing
        axes = [(np.arange(n) + 0.5) * hk for n, hk in zip(self.shape, h)]
        return np.meshgrid(*axes, indexing="ij")


@dataclass(frozen=True)
class Dirichlet:
    """Reservoir values ``(c+, c-, phi)`` imposed on a face."""

    c_plus: float
    c_minus: float
    phi: float
    kind: str = field(default="DIRICHLET", init=False)


@dataclass(frozen=True)
class NoFlux:
    """Blocking face: no species flux and no displacement flux."""

    kind: str = field(default="NO_FLUX", init=False)


@dataclass(frozen=True)
class AppliedCurrent:
    """Inward charge flux density ``value`` carried half by each species.

    The salt flux through the face is zero and ``phi`` has a homogeneous
    Neumann condition there.
    """

    value: float
    kind: str = field(default="APPLIED_CURRENT", init=False)


_NO_FLUX = NoFlux()


@dataclass(frozen=True)
class BoundarySpec:
    """Per-face boundary conditions; unlisted faces are NO_FLUX.

    Face names are ``x-``, ``x+``, ``y-``, ``y+`` (and ``z-``, ``z+``).
    """

    conditions: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for k in self.conditions:
            if k not in FACES:
                raise ConfigError(f"unknown boundary face {k!r}")

    def condition(self, face: str):
        return self.conditions.get(face, _NO_FLUX)

    def to_dict(self) -> dict:
        out = {}
        for k, c in sorted(self.conditions.items()):
            if c.kind == "DIRICHLET":
                out[k] = {"type": "DIRICHLET", "c_plus": c.c_plus, "c_minus": c.c_minus, "phi": c.phi}
            elif c.kind == "APPLIED_CURRENT":
                out[k] = {"type": "APPLIED_CURRENT", "value": c.value}
            else:
                out[k] = {"type": "NO_FLUX"}
        return out

    @classmethod
    def from_dict(cls, data: Mapping | None) -> "BoundarySpec":
        conds = {}
        for face, spec in (data or {}).items():
            kind = spec.get("type", "NO_FLUX")
            if kind == "DIRICHLET":
                conds[face] = Dirichlet(float(spec["c_plus"]), float(spec["c_minus"]), float(spec["phi"]))
            elif kind == "APPLIED_CURRENT":
                conds[face] = AppliedCurrent(float(spec["value"]))
            elif kind == "NO_FLUX":
                conds[face] = NoFlux()
            else:
                raise ConfigError(f"unknown boundary condition {kind!r} on {face}")
        return cls(conds)


@dataclass(frozen=True, eq=False)
class MacroState:
    """Macroscopic fields at one instant."""

    grid: MacroGrid
    c_plus: np.ndarray
    c_minus: np.ndarray
    phi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for name in ("c_plus", "c_minus", "phi"):
            a = np.array(getattr(self, name), dtype=float).reshape(self.grid.shape)
            if not np.all(np.isfinite(a)):
                raise PhysicalRegimeError(f"{name} has non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        for name in ("c_plus", "c_minus"):
            a = getattr(self, name)
            if a.min() < 0:
                k = int(np.argmin(a))
                raise PhysicalRegimeError(f"{name} is negative ({a.flat[k]:.3e}) at node {k}", node=k)

    @classmethod
    def uniform(cls, grid: MacroGrid, c_plus: float, c_minus: float, phi: float = 0.0) -> "MacroState":
        f = lambda v: np.full(grid.shape, float(v))  # noqa: E731
        return cls(grid, f(c_plus), f(c_minus), f(phi))

    def totals(self) -> tuple:
        """Integrals of ``c+`` and ``c-`` over the grid (without the porosity)."""
        v = self.grid.cell_volume
        return float(self.c_plus.sum() * v), float(self.c_minus.sum() * v)


# ---------------------------------------------------------------------------
# assembly


def _diagonal_coefficients(t: EffectiveTensors, axes):
    idx = np.asarray(axes)
    out = {}
    for name in ("D_hat", "M_hat", "eps_hat"):
        A = getattr(t, name)[np.ix_(idx, idx)]
        off = A - np.diag(np.diag(A))
        scale = max(np.abs(A).max(), 1e-300)
        if np.abs(off).max() > OFFDIAG_TOL * scale:
            raise ConfigError(
                f"{name} is not diagonal in the grid axes; rotate it to principal axes "
                "with pnph.tensors.coordinate_transform before macro stepping")
        out[name] = np.diag(A).copy()
    return out


def build_macro_graph(grid: MacroGrid, t: EffectiveTensors, rho_s=None) -> FVGraph:
    """Finite-volume graph of the macro problem.

    ``rho_s`` overrides ``t.rho_s`` and may be a per-node field.
    """
    coef = _diagonal_coefficients(t, grid.axes)
    shape = grid.shape
    n = grid.size
    h = grid.spacing
    vol = grid.cell_volume
    index = np.arange(n).reshape(shape)
    pf, sf, pb, sb = ([], [], [], [])
    for k in range(grid.ndim):
        area = vol / h[k]
        Dk, Mk, Ek = coef["D_hat"][k], coef["M_hat"][k], coef["eps_hat"][k]
        lo = np.take(index, np.arange(shape[k] - 1), axis=k).ravel()
        hi = np.take(index, np.arange(1, shape[k]), axis=k).ravel()
        first = np.take(index, 0, axis=k).ravel()
        last = np.take(index, shape[k] - 1, axis=k).ravel()
        if Ek > 0:
            pf.append((lo, hi, np.full(lo.size, Ek * area / h[k])))
            for cells, fid in ((first, 2 * k), (last, 2 * k + 1)):
                pb.append((cells, np.full(cells.size, 2 * Ek * area / h[k]), np.full(cells.size, fid)))
        if Dk > 0:
            r = Mk / Dk
            sf.append((lo, hi, np.full(lo.size, Dk * area / h[k]), np.full(lo.size, r)))
            for cells, fid in ((first, 2 * k), (last, 2 * k + 1)):
                sb.append((cells, np.full(cells.size, 2 * Dk * area / h[k]), np.full(cells.size, r),
                           np.full(cells.size, area), np.full(cells.size, fid)))
        elif Mk != 0:
            logger.warning("axis %d has zero diffusivity but nonzero mobility; treated as blocked", k)

    def cat(parts, m, dtype=float):
        if not parts:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([p[m] for p in parts]).astype(dtype)

    rho = t.rho_s if rho_s is None else rho_s
    rho = np.broadcast_to(np.asarray(rho, float), shape).ravel()
    p = t.p
    return FVGraph(
        volume=np.full(n, vol),
        pf_i=cat(pf, 0, np.int64), pf_j=cat(pf, 1, np.int64), pf_T=cat(pf, 2),
        pb_cell=cat(pb, 0, np.int64), pb_T=cat(pb, 1), pb_face=cat(pb, 2, np.int64),
        species=np.arange(n),
        sf_i=cat(sf, 0, np.int64), sf_j=cat(sf, 1, np.int64), sf_T=cat(sf, 2), sf_r=cat(sf, 3),
        sb_cell=cat(sb, 0, np.int64), sb_T=cat(sb, 1), sb_r=cat(sb, 2), sb_area=cat(sb, 3),
        sb_face=cat(sb, 4, np.int64),
        capacity=np.full(n, p * vol), q_weight=np.full(n, p * vol), fixed_charge=rho * vol,
    )


@dataclass
class MacroProblem:
    """Assembled macro problem reused across time steps.

    Parameters
    ----------
    grid : MacroGrid
    tensors : EffectiveTensors
    bc : BoundarySpec
    rho_s : float or ndarray, optional
        Fixed charge field overriding ``tensors.rho_s``.
    """

    grid: MacroGrid
    tensors: EffectiveTensors
    bc: BoundarySpec = field(default_factory=BoundarySpec)
    rho_s: object = None

    def __post_init__(self):
        for k in range(self.grid.ndim, 3):
            for face in FACES[2 * k:2 * k + 2]:
                if face in self.bc.conditions:
                    raise ConfigError(f"face {face} does not exist on a {self.grid.ndim}D grid")
        self.graph = build_macro_graph(self.grid, self.tensors, self.rho_s)
        self.rb = self.graph.resolve(self.bc)

    def _state(self, state, cp, cm, phi, dt):
        self.graph.check_positive(cp, cm, tol=1e-12 * max(1.0, cp.max(), cm.max()))
        cp = np.maximum(cp, 0.0)
        cm = np.maximum(cm, 0.0)
        s = self.grid.shape
        return MacroState(self.grid, cp.reshape(s), cm.reshape(s), phi.reshape(s), state.time + dt)

    def solve_poisson(self, state: MacroState) -> np.ndarray:
        q = self.graph.charge(state.c_plus.ravel(), state.c_minus.ravel())
        return self.graph.solve_poisson(q, self.rb, phi_ref=state.phi.ravel()).reshape(self.grid.shape)

    def step(self, state: MacroState, dt: float,
             mode: Literal["semi_implicit", "implicit"] = "semi_implicit",
             frozen_phi=None, newton_tol: float = 1e-10) -> MacroState:
        if not dt > 0:
            raise ValueError("dt must be positive")
        cp, cm, phi = (state.c_plus.ravel(), state.c_minus.ravel(), state.phi.ravel())
        if frozen_phi is not None:
            fp = np.broadcast_to(np.asarray(frozen_phi, float), self.grid.shape).ravel()
            cp, cm, phi = self.graph.semi_implicit_step(cp, cm, phi, self.rb, dt, frozen_phi=fp)
        elif mode == "semi_implicit":
            cp, cm, phi = self.graph.semi_implicit_step(cp, cm, phi, self.rb, dt)
        elif mode == "implicit":
            cp, cm, phi = self.graph.implicit_step(cp, cm, phi, self.rb, dt, tol=newton_tol)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return self._state(state, cp, cm, phi, dt)

    def step_salt_charge(self, state: MacroState, dt: float, mode="semi_implicit") -> MacroState:
        """One step assembled in salt/charge variables (see :func:`step_salt_charge`)."""
        if mode == "implicit":
            return self.step(state, dt, mode="implicit")
        g, rb = self.graph, self.rb
        c, rho = to_salt_charge(state)
        c, rho = c.ravel(), rho.ravel()
        q = g.fixed_charge + 2.0 * g.q_weight * rho
        phi = g.solve_poisson(q, rb, phi_ref=state.phi.ravel())
        n = g.n_s
        i, j, T = g.sf_i, g.sf_j, g.sf_T
        x = g.sf_r * (phi[j] - phi[i])
        S = T * (bernoulli(x) + 0.5 * x)
        A = T * 0.5 * x
        rows, cols, vals = [], [], []
        # F_c = S (c_i - c_j) - A (rho_i + rho_j); F_rho likewise with c <-> rho
        for off, other in ((0, n), (n, 0)):
            rows += [off + i, off + i, off + i, off + i, off + j, off + j, off + j, off + j]
            cols += [off + i, off + j, other + i, other + j, off + i, off + j, other + i, other + j]
            vals += [S, -S, -A, -A, -S, S, A, A]
        diag = np.concatenate([g.capacity, g.capacity]) / dt
        rhs = diag * np.concatenate([c, rho])
        dm = rb.s_dirichlet
        if dm.any():
            cell = g.sb_cell[dm]
            xb = g.sb_r[dm] * (rb.s_phi[dm] - phi[cell])
            Sb = g.sb_T[dm] * (bernoulli(xb) + 0.5 * xb)
            Ab = g.sb_T[dm] * 0.5 * xb
            cD = 0.5 * (rb.s_cplus[dm] + rb.s_cminus[dm])
            rD = 0.5 * (rb.s_cplus[dm] - rb.s_cminus[dm])
            for off, other, vD, wD in ((0, n, cD, rD), (n, 0, rD, cD)):
                rows += [off + cell, off + cell]
                cols += [off + cell, other + cell]
                vals += [Sb, -Ab]
                rhs += np.bincount(off + cell, Sb * vD + Ab * wD, 2 * n)
        rhs[n:] += np.bincount(g.sb_cell, 0.5 * rb.s_current * g.sb_area, n)
        rows.append(np.arange(2 * n))
        cols.append(np.arange(2 * n))
        vals.append(diag)
        M = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * n, 2 * n)).tocsc()
        sol = spla.spsolve(M, rhs)
        c_new, rho_new = sol[:n], sol[n:]
        cp, cm = c_new + rho_new, c_new - rho_new
        return self._state(state, cp, cm, phi, dt)

    def residuals(self, state: MacroState) -> tuple:
        """Pointwise steady residuals ``(R+, R-, R_phi)`` (max norm per unit volume)."""
        g = self.graph
        U = np.concatenate([state.c_plus.ravel(), state.c_minus.ravel(), state.phi.ravel()])
        R, _ = g._residual_jacobian(U, (U[:g.n_s], U[g.n_s:2 * g.n_s]), self.rb, np.inf, 0.0)
        n = g.n_s
        v = g.volume
        return (float(np.abs(R[:n] / v).max()), float(np.abs(R[n:2 * n] / v).max()),
                float(np.abs(R[2 * n:] / v).max()))

    def gauss_defect(self, state: MacroState) -> float:
        """Total charge minus the displacement flux leaving through Dirichlet faces."""
        g, rb = self.graph, self.rb
        phi = state.phi.ravel()
        q = g.charge(state.c_plus.ravel(), state.c_minus.ravel())
        dm = rb.p_dirichlet
        out = np.sum(g.pb_T[dm] * (phi[g.pb_cell[dm]] - rb.p_value[dm]))
        return float(q.sum() - out)


# ---------------------------------------------------------------------------
# public functional interface


def step_macro_pnp(state: MacroState, t: EffectiveTensors, bc: BoundarySpec, dt: float,
                   mode: Literal["semi_implicit", "implicit"] = "semi_implicit",
                   frozen_phi=None, rho_s=None) -> MacroState:
    """Advance the macro PNP system by one step.

    Parameters
    ----------
    state : MacroState
    t : EffectiveTensors
        Must be diagonal in the grid axes.
    bc : BoundarySpec
    dt : float
    mode : {"semi_implicit", "implicit"}
        ``semi_implicit`` solves Poisson with the current charge and then an
        implicit transport step with that potential; mass is conserved to
        round-off and positivity holds for any ``dt``.  ``implicit`` is a
        backward-Euler Newton solve of the coupled system, needed when the
        dielectric relaxation time ``eps^2`` is much smaller than ``dt``.
    frozen_phi : ndarray, optional
        Skip Poisson and transport in this fixed potential.
    rho_s : float or ndarray, optional
        Fixed-charge field overriding ``t.rho_s``.

    Raises
    ------
    PhysicalRegimeError
        If a concentration turns negative.
    SolverError, CompatibilityError
        If a linear or Newton solve fails.
    """
    return MacroProblem(state.grid, t, bc, rho_s).step(state, dt, mode=mode, frozen_phi=frozen_phi)


def to_salt_charge(state: MacroState) -> tuple:
    """Salt ``c = (c+ + c-)/2`` and charge ``rho = (c+ - c-)/2``."""
    return 0.5 * (state.c_plus + state.c_minus), 0.5 * (state.c_plus - state.c_minus)


def from_salt_charge(c, rho) -> tuple:
    """Inverse of :func:`to_salt_charge`: ``(c + rho, c - rho)``.

    Raises
    ------
    PhysicalRegimeError
        If ``|rho| > c`` somewhere (a negative species concentration).
    """
    c = np.asarray(c, float)
    rho = np.asarray(rho, float)
    bad = np.abs(rho) > c
    if np.any(bad):
        k = int(np.flatnonzero(bad.ravel())[0])
        raise PhysicalRegimeError(f"|rho| exceeds c at node {k}", node=k)
    return c + rho, c - rho


def step_salt_charge(state: MacroState, t: EffectiveTensors, bc: BoundarySpec, dt: float,
                     mode: Literal["semi_implicit", "implicit"] = "semi_implicit",
                     rho_s=None) -> MacroState:
    """Advance in salt/charge variables.

    Solves

        p drho/dt = div(D grad rho + c M grad phi)
        p dc/dt   = div(D grad c + rho M grad phi)
        -div(eps grad phi) = 2 p rho + rho_s

    with the salt/charge form of the Scharfetter-Gummel flux,

        F_c   = T [S (c_i - c_j)     - A (rho_i + rho_j)]
        F_rho = T [S (rho_i - rho_j) - A (c_i + c_j)]

    where ``S = (x/2) coth(x/2)`` and ``A = x/2``.  The charge variable is
    half the species difference, so the Poisson source is ``2 p rho``.  In
    ``implicit`` mode the coupled Newton solve runs in species variables.
    """
    return MacroProblem(state.grid, t, bc, rho_s).step_salt_charge(state, dt, mode=mode)


def conductivity_tensor(t: EffectiveTensors, rho) -> np.ndarray:
    """Local macroscopic conductivity ``rho * M_hat``."""
    return np.multiply.outer(np.asarray(rho, float), t.M_hat)


# ---------------------------------------------------------------------------
# steady state


@dataclass
class SteadyResult:
    state: MacroState
    iterations: int
    residuals: tuple
    history: list


def _species_components(g: FVGraph, rb):
    n = g.n_s
    G = sp.coo_matrix((np.ones(len(g.sf_i)), (g.sf_i, g.sf_j)), shape=(n, n))
    nc, labels = connected_components(G, directed=False)
    anchored = np.zeros(nc, bool)
    anchored[labels[g.sb_cell[rb.s_dirichlet]]] = True
    return labels, ~anchored


def steady_state(state: MacroState, t: EffectiveTensors, bc: BoundarySpec, tol: float = 1e-10,
                 damping: float = 0.5, maxiter: int = 500, rho_s=None,
                 return_info: bool = False):
    """Damped Gummel iteration for the steady macro PNP system.

    Each sweep solves the nonlinear Poisson equation with the species
    frozen in quasi-Fermi form ``c+- exp(-+(phi - phi_old))`` (Newton),
    relaxes the potential update by ``damping`` and then solves the
    steady transport equations in that potential.  Closed species
    components keep the particle counts of ``state``.

    Returns
    -------
    MacroState, or SteadyResult if ``return_info``.

    Raises
    ------
    CompatibilityError
        If a region without a Dirichlet face for ``phi`` is not neutral.
    SolverError
        On stagnation; ``history`` lists the residual maxima per sweep.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    prob = MacroProblem(state.grid, t, bc, rho_s)
    g, rb = prob.graph, prob.rb
    # a closed region keeps its net charge, so it has no steady state unless neutral
    g._check_neutral(g.charge(state.c_plus.ravel(), state.c_minus.ravel()),
                     *g.poisson_components(rb), 1e-9)
    res = prob.residuals(state)
    history = [max(res)]
    if max(res) <= tol:
        out = replace(state)
        return SteadyResult(out, 0, res, history) if return_info else out
    labels, floating = _species_components(g, rb)
    nc = len(floating)
    cp, cm, phi = (state.c_plus.ravel().copy(), state.c_minus.ravel().copy(), state.phi.ravel().copy())
    mass = [np.bincount(labels, g.capacity * c, nc) for c in (cp, cm)]
    _, first = np.unique(labels, return_index=True)
    pins = first[floating]
    A = g.poisson_matrix(rb)
    sp_idx = g.species
    best = np.inf
    stall = 0
    for it in range(1, maxiter + 1):
        # nonlinear Poisson, Newton
        psi = phi.copy()
        for _ in range(50):
            d = psi[sp_idx] - phi[sp_idx]
            ep, em = cp * np.exp(-d), cm * np.exp(d)
            q = g.fixed_charge.copy()
            np.add.at(q, sp_idx, g.q_weight * (ep - em))
            F = A @ psi - g.poisson_rhs(q, rb)
            jd = np.zeros(g.n_p)
            np.add.at(jd, sp_idx, g.q_weight * (ep + em))
            J = (A + sp.diags(jd)).tocsc()
            dpsi = spla.spsolve(J, -F)
            psi += dpsi
            if np.abs(dpsi).max() <= 1e-13 * max(1.0, np.abs(psi).max()):
                break
        phi = phi + damping * (psi - phi)
        # steady transport in the relaxed potential
        for s, (z, c) in enumerate(((1, cp), (-1, cm))):
            M, src = g.transport_system(phi, z, rb, np.inf)
            rhs = src.copy()
            if pins.size:
                keep = np.ones(g.n_s)
                keep[pins] = 0.0
                members = np.flatnonzero(floating[labels])
                C = sp.coo_matrix((g.capacity[members], (pins[np.searchsorted(
                    np.flatnonzero(floating), labels[members])], members)), shape=M.shape)
                M = sp.diags(keep) @ M + C
                rhs[pins] = mass[s][floating]
            sol = spla.spsolve(M.tocsc(), rhs)
            if s == 0:
                cp = sol
            else:
                cm = sol
        if min(cp.min(), cm.min()) < 0:
            cp, cm = np.maximum(cp, 0.0), np.maximum(cm, 0.0)
        s = prob.grid.shape
        cur = MacroState(prob.grid, cp.reshape(s), cm.reshape(s), phi.reshape(s), state.time)
        res = prob.residuals(cur)
        history.append(max(res))
        logger.debug("gummel %d: residuals %s", it, res)
        if max(res) <= tol:
            return SteadyResult(cur, it, res, history) if return_info else cur
        if max(res) < 0.999 * best:
            best, stall = max(res), 0
        else:
            stall += 1
            if stall > 25:
                break
    raise SolverError(f"Gummel iteration stagnated at residual {history[-1]:.3e}",
                      residual=history[-1], history=history)


# ---------------------------------------------------------------------------
# scales


@dataclass(frozen=True)
class ScaleSet:
    """Reference scales and the pore-to-macro rescaling.

    Attributes
    ----------
    ell : float
        Pore length scale.
    c_bar : float
        Reference concentration.
    thermal_voltage : float
        ``kT/e``.
    D : float
        Reference molecular diffusivity.
    epsilon : float
        Debye length over ``ell``.
    r : float
        Ratio of pore to macro length, ``ell / L``.
    """

    ell: float = 1.0
    c_bar: float = 1.0
    thermal_voltage: float = 1.0
    D: float = 1.0
    epsilon: float = 1.0
    r: float = 1.0

    @property
    def L(self) -> float:
        return self.ell / self.r

    @property
    def t_D(self) -> float:
        return self.ell ** 2 / self.D

    @property
    def eps_bar(self) -> float:
        return self.r * self.epsilon

    def macro_length(self, x_tilde):
        return self.r * np.asarray(x_tilde, float)

    def macro_time(self, t_tilde):
        return self.r ** 2 * np.asarray(t_tilde, float)

    def macro_gradient(self, g_tilde):
        return np.asarray(g_tilde, float) / self.r


def rescale_macro(scales: ScaleSet, r: float) -> ScaleSet:
    """Attach the scale ratio ``r`` so ``eps_bar = r eps`` and ``t_bar = r^2 t``."""
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    return replace(scales, r=float(r))


def debye_length(permittivity: float, kT: float, charge: float, c0: float) -> float:
    """``sqrt(permittivity kT / (2 e^2 c0))`` for a symmetric binary electrolyte."""
    return float(np.sqrt(permittivity * kT / (2.0 * charge ** 2 * c0)))


# ---------------------------------------------------------------------------
# I/O


def format_series_csv(states: Sequence[MacroState], model: str | None = None) -> str:
    """Time series with columns ``[model,] t, x[, y], c_plus, c_minus, phi``."""
    if not states:
        raise ValueError("no states to write")
    grid = states[0].grid
    coords = [c.ravel() for c in grid.centers()]
    names = ["x", "y", "z"][: grid.ndim]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((["model"] if model else []) + ["t"] + names + ["c_plus", "c_minus", "phi"])
    for s in states:
        cols = [s.c_plus.ravel(), s.c_minus.ravel(), s.phi.ravel()]
        for k in range(grid.size):
            row = [repr(float(s.time))] + [repr(float(c[k])) for c in coords]
            row += [repr(float(c[k])) for c in cols]
            w.writerow(([model] if model else []) + row)
    return buf.getvalue()


def write_series_csv(path, states: Sequence[MacroState], model: str | None = None) -> None:
    """Write :func:`format_series_csv` output to ``path``."""
    with open(path, "w", newline="") as fh:
        fh.write(format_series_csv(states, model))


def read_series_csv(path) -> list:
    """Rows of a series file as dictionaries of floats (``model`` kept as str)."""
    with open(path, newline="") as fh:
        return [{k: (v if k == "model" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def run_summary(states: Sequence[MacroState], t: EffectiveTensors, residuals=None,
                model: str | None = None) -> dict:
    """Summary with species totals (``p`` times the integral), step count and residuals."""
    first, last = states[0], states[-1]
    out = {
        "steps": len(states) - 1,
        "t_final": float(last.time),
        "mass_initial": [t.p * m for m in first.totals()],
        "mass_final": [t.p * m for m in last.totals()],
    }
    if residuals is not None:
        out["residuals"] = [float(r) for r in residuals]
    if model:
        out["model"] = model
    return out


def write_summary_json(path, summary: dict) -> None:
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
