"""Pore-scale PNP on a perforated 2D domain built by tiling a reference cell.

The domain ``Omega = [0, l1] x [0, l2]`` holds ``n x n`` copies of the cell
scaled by ``r = 1/n``.  Ions move in the pore voxels only; the potential
lives on every voxel carrying a nonzero permittivity (``eps^2`` in the pore,
``alpha`` in the solid).  Interface facets carry the Neumann datum
``r sigma_s``, which enters the discrete Poisson balance of the adjacent pore
voxel as a fixed charge.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ._fv import FVGraph
from .cell_solver import face_coefficients, permittivity_field
from .errors import ConfigError, PhysicalRegimeError
from .geometry import ReferenceCell, interface_facets
from .macro_solver import BoundarySpec, MacroGrid, MacroProblem, MacroState
from .tensors import EffectiveTensors, effective_tensors

logger = logging.getLogger(__name__)

MAX_TILES = 8
MAX_VOXELS = 1 << 20


@dataclass(eq=False)
class MicroDomain:
    """Tiled perforated domain.

    Attributes
    ----------
    cell : ReferenceCell
    n : int
        Tiles per axis; the period is ``r = 1/n``.
    bc : BoundarySpec
        Outer boundary conditions of ``Omega``.
    pore : ndarray of bool
        Tiled pore mask.
    coeff : ndarray
        Tiled permittivity field.
    surface_charge : ndarray
        Fixed charge ``r sigma_s * facet area`` collected on pore voxels.
    graph : FVGraph
    """

    cell: ReferenceCell
    n: int
    bc: BoundarySpec
    pore: np.ndarray
    coeff: np.ndarray
    surface_charge: np.ndarray
    graph: FVGraph = field(repr=False)
    poisson_mask: np.ndarray = field(repr=False)

    @property
    def r(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return self.pore.shape

    @property
    def spacing(self) -> np.ndarray:
        return self.cell.spacing * self.r

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def lengths(self) -> tuple:
        return tuple(self.cell.lengths)


@dataclass(frozen=True, eq=False)
class MicroState:
    """Pore-scale fields; concentrations are zero on solid voxels and
    ``phi`` is zero where it carries no unknown."""

    c_plus: np.ndarray
    c_minus: np.ndarray
    phi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        for name in ("c_plus", "c_minus", "phi"):
            a = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(a)):
                raise PhysicalRegimeError(f"{name} has non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        for name in ("c_plus", "c_minus"):
            a = getattr(self, name)
            if a.min() < 0:
                k = int(np.argmin(a))
                raise PhysicalRegimeError(f"{name} negative at voxel {k}", node=k)


def build_perforated_domain(cell: ReferenceCell, n: int, outer_bc: BoundarySpec | None = None,
                            max_tiles: int = MAX_TILES, max_voxels: int = MAX_VOXELS) -> MicroDomain:
    """Tile a 2D cell ``n x n`` times with period ``r = 1/n``.

    Raises
    ------
    ConfigError
        For 3D cells, ``n < 1``, ``n > max_tiles`` or more than
        ``max_voxels`` voxels.
    """
    if cell.ndim != 2:
        raise ConfigError("the pore-scale solver is 2D only")
    n = int(n)
    if n < 1:
        raise ConfigError("n must be at least 1")
    if n > max_tiles:
        raise ConfigError(f"n={n} exceeds the tile cap {max_tiles}")
    total = n * n * cell.phase.size
    if total > max_voxels:
        raise ConfigError(f"{total} voxels exceed the cap {max_voxels}")
    bc = outer_bc or BoundarySpec()
    for face in bc.conditions:
        if face not in ("x-", "x+", "y-", "y+"):
            raise ConfigError(f"face {face} does not exist on a 2D domain")
    r = 1.0 / n
    m = cell.dims
    pore = np.tile(cell.pore, (n, n))
    coeff = np.tile(permittivity_field(cell), (n, n))
    h = cell.spacing * r
    vol = float(np.prod(h))
    # surface charge: each cell facet goes to its pore voxel in every tile
    fac = interface_facets(cell)
    q_cell = np.zeros(cell.dims)
    np.add.at(q_cell, tuple(fac.index.T), r * fac.sigma * fac.area * r ** (cell.ndim - 1))
    surface = np.tile(q_cell, (n, n))
    shape = pore.shape
    pmask = coeff > 0
    graph = _micro_graph(shape, h, coeff, pore, pmask, surface)
    return MicroDomain(cell, n, bc, pore, coeff, surface, graph, pmask)


def _micro_graph(shape, h, coeff, pore, pmask, surface) -> FVGraph:
    vol = float(np.prod(h))
    pidx = -np.ones(shape, np.int64)
    pidx[pmask] = np.arange(int(pmask.sum()))
    sidx = -np.ones(shape, np.int64)
    sidx[pore] = np.arange(int(pore.sum()))
    kf = face_coefficients(coeff)
    pf, sf, pb, sb = [], [], [], []
    for k in range(2):
        area = vol / h[k]
        sl_lo = [slice(None)] * 2
        sl_hi = [slice(None)] * 2
        sl_lo[k] = slice(0, shape[k] - 1)
        sl_hi[k] = slice(1, shape[k])
        lo, hi = tuple(sl_lo), tuple(sl_hi)
        T = kf[k][lo] * area / h[k]
        both = pmask[lo] & pmask[hi] & (T > 0)
        pf.append((pidx[lo][both], pidx[hi][both], T[both]))
        sboth = pore[lo] & pore[hi]
        sf.append((sidx[lo][sboth], sidx[hi][sboth], np.full(int(sboth.sum()), area / h[k])))
        for side, fid in ((0, 2 * k), (shape[k] - 1, 2 * k + 1)):
            sl = [slice(None)] * 2
            sl[k] = side
            sl = tuple(sl)
            pm = pmask[sl]
            pb.append((pidx[sl][pm], 2 * coeff[sl][pm] * area / h[k], np.full(int(pm.sum()), fid)))
            sm = pore[sl]
            sb.append((sidx[sl][sm], np.full(int(sm.sum()), 2 * area / h[k]),
                       np.full(int(sm.sum()), area), np.full(int(sm.sum()), fid)))
    cat = lambda parts, m: np.concatenate([p[m] for p in parts])  # noqa: E731
    n_s = int(pore.sum())
    fixed = surface[pmask].copy()
    lost = surface[~pmask].sum()
    if lost != 0:
        raise ConfigError("surface charge assigned to a voxel without a potential unknown")
    return FVGraph(
        volume=np.full(int(pmask.sum()), vol),
        pf_i=cat(pf, 0), pf_j=cat(pf, 1), pf_T=cat(pf, 2),
        pb_cell=cat(pb, 0), pb_T=cat(pb, 1), pb_face=cat(pb, 2),
        species=pidx[pore],
        sf_i=cat(sf, 0), sf_j=cat(sf, 1), sf_T=cat(sf, 2), sf_r=np.ones(len(cat(sf, 0))),
        sb_cell=cat(sb, 0), sb_T=cat(sb, 1), sb_r=np.ones(len(cat(sb, 0))),
        sb_area=cat(sb, 2), sb_face=cat(sb, 3),
        capacity=np.full(n_s, vol), q_weight=np.full(n_s, vol), fixed_charge=fixed,
    )


def initial_state(domain: MicroDomain, c_plus, c_minus, phi=0.0) -> MicroState:
    """State from callables ``f(x, y)`` or constants, restricted to the pore."""
    x, y = voxel_centers(domain)

    def ev(f):
        v = f(x, y) if callable(f) else np.full(domain.shape, float(f))
        return np.broadcast_to(np.asarray(v, float), domain.shape)

    cp = np.where(domain.pore, ev(c_plus), 0.0)
    cm = np.where(domain.pore, ev(c_minus), 0.0)
    ph = np.where(domain.poisson_mask, ev(phi), 0.0)
    return MicroState(cp, cm, ph)


def voxel_centers(domain: MicroDomain):
    h = domain.spacing
    axes = [(np.arange(n) + 0.5) * hk for n, hk in zip(domain.shape, h)]
    return np.meshgrid(*axes, indexing="ij")


def step_micro_pnp(domain: MicroDomain, state: MicroState, dt: float,
                   mode: Literal["semi_implicit", "implicit"] = "implicit") -> MicroState:
    """Advance the pore-scale system by one step.

    Uses the same Scharfetter-Gummel face scheme and time integrators as the
    macro solver.  Interface facets are blocking for both species.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = domain.graph
    rb = g.resolve(domain.bc)
    pore, pm = domain.pore, domain.poisson_mask
    cp, cm, phi = state.c_plus[pore], state.c_minus[pore], state.phi[pm]
    if mode == "semi_implicit":
        cp, cm, phi = g.semi_implicit_step(cp, cm, phi, rb, dt)
    elif mode == "implicit":
        cp, cm, phi = g.implicit_step(cp, cm, phi, rb, dt)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    g.check_positive(cp, cm, tol=1e-12 * max(1.0, cp.max(), cm.max()))
    out = [np.zeros(domain.shape) for _ in range(3)]
    out[0][pore] = np.maximum(cp, 0.0)
    out[1][pore] = np.maximum(cm, 0.0)
    out[2][pm] = phi
    return MicroState(out[0], out[1], out[2], state.time + dt)


def pore_totals(domain: MicroDomain, state: MicroState) -> tuple:
    v = domain.voxel_volume
    return float(state.c_plus.sum() * v), float(state.c_minus.sum() * v)


def gauss_defect(domain: MicroDomain, state: MicroState) -> float:
    """Charge in ``Omega`` (ions plus surface) minus the outward displacement flux."""
    g = domain.graph
    rb = g.resolve(domain.bc)
    phi = state.phi[domain.poisson_mask]
    q = g.charge(state.c_plus[domain.pore], state.c_minus[domain.pore])
    dm = rb.p_dirichlet
    out = np.sum(g.pb_T[dm] * (phi[g.pb_cell[dm]] - rb.p_value[dm]))
    return float(q.sum() - out)


def cell_average(state: MicroState, n: int, pore: np.ndarray | None = None,
                 poisson_mask: np.ndarray | None = None) -> dict:
    """Per-tile averages on an ``n x n`` tiling.

    ``c_plus``/``c_minus`` are averaged over the pore voxels of each tile
    (the pore integral divided by the pore fraction); ``phi`` is averaged
    over the voxels carrying a potential.

    Raises
    ------
    ValueError
        If the grid is not divisible by ``n``.
    """
    shape = state.c_plus.shape
    if any(s % n for s in shape):
        raise ValueError(f"grid {shape} is not divisible into {n} tiles per axis")
    pore = np.ones(shape, bool) if pore is None else pore
    pm = np.ones(shape, bool) if poisson_mask is None else poisson_mask
    m = [s // n for s in shape]

    def tile_sum(a):
        return a.reshape(n, m[0], n, m[1]).sum(axis=(1, 3))

    cnt = tile_sum(pore.astype(float))
    pcnt = tile_sum(pm.astype(float))
    return {
        "c_plus": tile_sum(np.where(pore, state.c_plus, 0.0)) / cnt,
        "c_minus": tile_sum(np.where(pore, state.c_minus, 0.0)) / cnt,
        "phi": tile_sum(np.where(pm, state.phi, 0.0)) / pcnt,
    }


def average_domain(domain: MicroDomain, state: MicroState) -> dict:
    return cell_average(state, domain.n, domain.pore, domain.poisson_mask)


# ---------------------------------------------------------------------------
# micro vs macro comparison


@dataclass
class CompareReport:
    n: int
    L2_c: float
    L2_phi: float
    runtimes: dict

    @property
    def L2(self) -> float:
        """Combined distance over ``(c+, c-, phi)``."""
        return float(np.hypot(self.L2_c, self.L2_phi))

    def to_dict(self) -> dict:
        return {"n": self.n, "L2": self.L2, "L2_c": self.L2_c, "L2_phi": self.L2_phi,
                "runtimes": self.runtimes}


def _tile_average_macro(state: MacroState, n: int) -> dict:
    s = state.grid.shape
    m = [k // n for k in s]
    f = lambda a: a.reshape(n, m[0], n, m[1]).mean(axis=(1, 3))  # noqa: E731
    return {"c_plus": f(state.c_plus), "c_minus": f(state.c_minus), "phi": f(state.phi)}


def compare_micro_macro(cell: ReferenceCell, n: int, c0=None, dt: float = 5e-3, steps: int = 10,
                        bc: BoundarySpec | None = None, tensors: EffectiveTensors | None = None,
                        mode: str = "implicit", macro_per_tile: int | None = 4) -> CompareReport:
    """Run the tiled pore-scale model and the macro model from matching data.

    The initial salt profile ``c0(x, y)`` (default ``1 + 0.5 cos(2 pi x)``)
    is shifted by the uniform counter-charge ``-rho_s / (2p)`` per species so
    every tile starts neutral.  Both runs use the same time steps.  The
    macro grid has ``macro_per_tile`` cells per tile and axis, capped at the
    micro resolution (``None`` uses the micro resolution).  L2 norms are taken over the tile
    averages with tile area weights; with closed outer faces the salt
    part vanishes at ``n = 1`` by conservation, so :attr:`CompareReport.L2`
    is the quantity to track in ``n``.
    """
    c0 = c0 or (lambda x, y: 1.0 + 0.5 * np.cos(2 * np.pi * x))
    bc = bc or BoundarySpec()
    t_start = time.perf_counter()
    t = tensors or effective_tensors(cell)
    t_cell = time.perf_counter() - t_start
    delta = -t.rho_s / (2.0 * t.p)

    t0 = time.perf_counter()
    dom = build_perforated_domain(cell, n, bc)
    st = initial_state(dom, lambda x, y: c0(x, y) + delta, lambda x, y: c0(x, y) - delta)
    for _ in range(steps):
        st = step_micro_pnp(dom, st, dt, mode=mode)
    micro = average_domain(dom, st)
    t_micro = time.perf_counter() - t0

    t0 = time.perf_counter()
    shape = dom.shape
    if macro_per_tile is not None:
        shape = tuple(n * min(int(macro_per_tile), k) for k in cell.dims)
    grid = MacroGrid(shape, dom.lengths)
    x, y = grid.centers()
    ms = MacroState(grid, c0(x, y) + delta, c0(x, y) - delta, np.zeros(grid.shape))
    prob = MacroProblem(grid, t, bc)
    for _ in range(steps):
        ms = prob.step(ms, dt, mode=mode)
    macro = _tile_average_macro(ms, n)
    t_macro = time.perf_counter() - t0

    area = float(np.prod(dom.lengths)) / n ** 2
    dc = (micro["c_plus"] - macro["c_plus"]) ** 2 + (micro["c_minus"] - macro["c_minus"]) ** 2
    L2_c = float(np.sqrt(area * dc.sum()))
    L2_phi = float(np.sqrt(area * ((micro["phi"] - macro["phi"]) ** 2).sum()))
    return CompareReport(n, L2_c, L2_phi,
                         {"cell": t_cell, "micro": t_micro, "macro": t_macro})


def write_compare_json(path, reports) -> None:
    data = [r.to_dict() for r in reports] if isinstance(reports, (list, tuple)) else reports.to_dict()
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def format_snapshot_csv(domain: MicroDomain, state: MicroState) -> str:
    """Voxel snapshot ``i, j, x, y, phase, c_plus, c_minus, phi``."""
    x, y = voxel_centers(domain)
    lines = ["i,j,x,y,phase,c_plus,c_minus,phi"]
    for (i, j), _ in np.ndenumerate(domain.pore):
        lines.append(f"{i},{j},{x[i, j]!r},{y[i, j]!r},{int(domain.pore[i, j])},"
                     f"{state.c_plus[i, j]!r},{state.c_minus[i, j]!r},{state.phi[i, j]!r}")
    return "\n".join(lines) + "\n"


def write_snapshot_csv(path, domain: MicroDomain, state: MicroState) -> None:
    with open(path, "w") as fh:
        fh.write(format_snapshot_csv(domain, state))
