"""Voxelized periodic reference cells.

A reference cell is a periodic box ``Y = [0, l1] x ... x [0, ld]`` split into
voxels labelled PORE (electrolyte) or SOLID (matrix).  Surface charge lives on
the facets separating a PORE voxel from a SOLID voxel.  Facets are indexed by
``(axis, voxel)``: the facet of voxel ``i`` in direction ``k`` is the face
shared with the periodic neighbour ``i + e_k``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import GeometryError

logger = logging.getLogger(__name__)

PORE = 1
SOLID = 0

PRESETS = (
    "straight_channel_2d",
    "straight_channel_3d",
    "perturbed_channel_3d",
    "rectangle_pore_2d",
    "circular_inclusion_2d",
)


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ReferenceCell:
    """Immutable voxelized periodic unit cell.

    Parameters
    ----------
    phase : ndarray of uint8, shape ``dims``
        1 for PORE voxels, 0 for SOLID voxels.
    lengths : tuple of float
        Physical edge lengths of the cell.
    sigma_s : tuple of ndarray
        Per-axis facet surface charge; ``sigma_s[k][i]`` is the charge density
        on the facet between voxel ``i`` and ``i + e_k``.  Zero on facets that
        are not on the pore-solid interface.
    facet_area : tuple of ndarray
        Per-axis facet measure used in surface integrals; zero off-interface.
    epsilon : float
        Dimensionless Debye length.
    alpha : float
        Solid-to-pore permittivity ratio.

    Use :meth:`from_mask` rather than calling the constructor directly.
    """

    phase: np.ndarray
    lengths: tuple
    sigma_s: tuple
    facet_area: tuple
    epsilon: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        phase = np.asarray(self.phase)
        if phase.ndim not in (2, 3):
            raise GeometryError(f"cells must be 2D or 3D, got ndim={phase.ndim}")
        if min(phase.shape) < 2:
            raise GeometryError(f"every axis needs at least 2 voxels, got {phase.shape}")
        if not np.isin(phase, (SOLID, PORE)).all():
            raise GeometryError("phase labels must be 0 (SOLID) or 1 (PORE)")
        if len(self.lengths) != phase.ndim or min(self.lengths) <= 0:
            raise GeometryError(f"bad lengths {self.lengths!r} for a {phase.ndim}D cell")
        if not self.epsilon > 0:
            raise GeometryError("epsilon must be positive")
        if not self.alpha >= 0:
            raise GeometryError("alpha must be non-negative")
        n_pore = int(phase.sum())
        if n_pore == 0:
            raise GeometryError("cell has no pore voxels")
        if n_pore == phase.size:
            raise GeometryError("cell has no solid voxels")
        interface = _interface_masks(phase)
        for k in range(phase.ndim):
            s = np.asarray(self.sigma_s[k], dtype=float)
            if s.shape != phase.shape:
                raise GeometryError("sigma_s arrays must match the phase shape")
            if np.any(s[~interface[k]] != 0):
                raise GeometryError("sigma_s is nonzero on a facet that is not pore-solid")
        object.__setattr__(self, "phase", _frozen(phase.astype(np.uint8)))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "sigma_s", tuple(_frozen(np.asarray(s, float)) for s in self.sigma_s))
        object.__setattr__(self, "facet_area", tuple(_frozen(np.asarray(a, float)) for a in self.facet_area))
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "alpha", float(self.alpha))
        if not connected_axes(self.phase == PORE):
            logger.warning("pore phase is not periodically connected along any axis")

    @classmethod
    def from_mask(
        cls,
        phase,
        lengths: Sequence[float] | None = None,
        sigma=0.0,
        epsilon: float = 1.0,
        alpha: float = 0.0,
        normal: Callable | None = None,
    ) -> "ReferenceCell":
        """Build a cell from a phase mask.

        Parameters
        ----------
        phase : array_like of {0, 1} or bool
            True/1 marks pore voxels.
        lengths : sequence of float, optional
            Cell edge lengths; unit cell by default.
        sigma : float or sequence of ndarray
            Uniform surface charge applied to every interface facet, or
            per-axis facet arrays as stored in :attr:`sigma_s`.
        normal : callable, optional
            ``normal(points) -> unit normals`` of the true (smooth) interface,
            evaluated at facet centres of shape ``(m, d)``.  When given, each
            facet area is weighted by ``|n . e_k|`` so surface integrals
            converge to the smooth-interface value instead of the staircase
            length.
        """
        phase = np.asarray(phase).astype(np.uint8)
        d = phase.ndim
        lengths = tuple(lengths) if lengths is not None else (1.0,) * d
        interface = _interface_masks(phase)
        h = np.asarray(lengths, float) / np.asarray(phase.shape)
        areas = []
        for k in range(d):
            base = float(np.prod(np.delete(h, k)))
            a = np.where(interface[k], base, 0.0)
            if normal is not None and interface[k].any():
                idx = np.argwhere(interface[k])
                centers = (idx + 0.5) * h
                centers[:, k] += 0.5 * h[k]
                n = np.asarray(normal(centers), float)
                a[interface[k]] = base * np.abs(n[:, k])
            areas.append(a)
        if np.isscalar(sigma):
            sig = tuple(np.where(interface[k], float(sigma), 0.0) for k in range(d))
        else:
            sig = tuple(np.asarray(s, float) for s in sigma)
        return cls(phase, lengths, sig, tuple(areas), epsilon, alpha)

    @property
    def ndim(self) -> int:
        return self.phase.ndim

    @property
    def dims(self) -> tuple:
        return self.phase.shape

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.lengths) / np.asarray(self.dims)

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def pore(self) -> np.ndarray:
        return self.phase == PORE

    @property
    def interface(self) -> tuple:
        """Per-axis boolean masks of pore-solid facets."""
        return _interface_masks(self.phase)

    def replace(self, **changes) -> "ReferenceCell":
        """Copy with ``epsilon``, ``alpha`` or ``sigma`` changed."""
        sigma = changes.pop("sigma", None)
        kw = dict(phase=self.phase, lengths=self.lengths, sigma_s=self.sigma_s,
                  facet_area=self.facet_area, epsilon=self.epsilon, alpha=self.alpha)
        kw.update(changes)
        if sigma is not None:
            kw["sigma_s"] = tuple(np.where(m, float(sigma), 0.0) for m in self.interface)
        return ReferenceCell(**kw)

    def scaled_sigma(self, factor: float) -> "ReferenceCell":
        return self.replace(sigma_s=tuple(factor * s for s in self.sigma_s))


def _interface_masks(phase):
    return tuple(phase != np.roll(phase, -1, axis=k) for k in range(phase.ndim))


def connected_axes(pore: np.ndarray) -> list:
    """Axes along which some pore component wraps around the periodic cell.

    Labels a 3x periodic tiling (2x along the probed axis would miss paths
    that wander across neighbouring cells) and checks whether a voxel in the
    central copy is connected to its own translate by one period.
    """
    out = []
    structure = ndimage.generate_binary_structure(pore.ndim, 1)
    tiled = np.tile(pore, (3,) * pore.ndim)
    labels, _ = ndimage.label(tiled, structure=structure)
    n = pore.shape
    center = tuple(slice(m, 2 * m) for m in n)
    for k in range(pore.ndim):
        shifted = list(center)
        shifted[k] = slice(2 * n[k], 3 * n[k])
        a = labels[center]
        b = labels[tuple(shifted)]
        if np.any((a > 0) & (a == b)):
            out.append(k)
    return out


@dataclass(frozen=True)
class InterfaceFacetSet:
    """Flat listing of pore-solid facets.

    Attributes
    ----------
    index : ndarray, shape (m, d)
        Index of the PORE voxel owning each facet.
    axis : ndarray, shape (m,)
        Facet normal axis.
    normal_sign : ndarray, shape (m,)
        +1 if the solid neighbour lies in the +axis direction, else -1, so
        ``normal_sign * e_axis`` points from PORE into SOLID.
    area : ndarray, shape (m,)
    sigma : ndarray, shape (m,)
    """

    index: np.ndarray
    axis: np.ndarray
    normal_sign: np.ndarray
    area: np.ndarray
    sigma: np.ndarray

    def __len__(self):
        return len(self.axis)

    @property
    def measure(self) -> float:
        return float(self.area.sum())


def interface_facets(cell: ReferenceCell) -> InterfaceFacetSet:
    """List the pore-solid facets of ``cell`` with pore-owned indices."""
    idx, axes, signs, areas, sigmas = [], [], [], [], []
    pore = cell.pore
    for k, mask in enumerate(cell.interface):
        lo = np.argwhere(mask)
        if lo.size == 0:
            continue
        hi = lo.copy()
        hi[:, k] = (hi[:, k] + 1) % cell.dims[k]
        lo_is_pore = pore[tuple(lo.T)]
        owner = np.where(lo_is_pore[:, None], lo, hi)
        idx.append(owner)
        axes.append(np.full(len(lo), k))
        signs.append(np.where(lo_is_pore, 1, -1))
        areas.append(cell.facet_area[k][mask])
        sigmas.append(cell.sigma_s[k][mask])
    return InterfaceFacetSet(
        index=np.concatenate(idx), axis=np.concatenate(axes),
        normal_sign=np.concatenate(signs), area=np.concatenate(areas),
        sigma=np.concatenate(sigmas),
    )


def porosity(cell: ReferenceCell) -> float:
    """Pore volume fraction ``|Y^p| / |Y|``."""
    return float(cell.pore.mean())


def homogenized_surface_charge(cell: ReferenceCell) -> float:
    """Surface charge per cell volume, ``(1/|Y|) sum sigma_s * facet_area``."""
    total = sum(float((s * a).sum()) for s, a in zip(cell.sigma_s, cell.facet_area))
    return total / cell.volume


# ---------------------------------------------------------------------------
# presets


def _centers(dims, lengths):
    h = np.asarray(lengths, float) / np.asarray(dims)
    return np.meshgrid(*[(np.arange(n) + 0.5) * hk for n, hk in zip(dims, h)], indexing="ij")


def _slab(n, p, name):
    count = int(round(p * n))
    if count <= 0 or count >= n:
        raise GeometryError(f"{name}: p={p} on {n} voxels leaves an empty phase")
    start = (n - count) // 2
    return start, start + count


def _straight_channel(dims, p):
    mask = np.zeros(dims, dtype=np.uint8)
    a, b = _slab(dims[1], p, "straight channel")
    index = [slice(None)] * len(dims)
    index[1] = slice(a, b)
    mask[tuple(index)] = PORE
    return mask


def _perturbed_channel(dims, p, notch_depth, notch_width):
    """Slab channel (normal to x2) perturbed by two staggered notches.

    One notch grows from the lower wall centred at ``x1 = 1/4`` of the
    period, the other from the upper wall centred at ``x1 = 3/4``, so the
    pore path meanders around them.  Each notch spans ``notch_width`` of the
    x1 period and ``notch_depth`` of the channel height.  The (x1, x2)
    cross-section is extruded along x3.
    """
    mask = _straight_channel(dims, p)
    n1 = dims[0]
    a, b = _slab(dims[1], p, "perturbed channel")
    cut = int(round(notch_depth * (b - a)))
    width = int(round(notch_width * n1))
    if cut <= 0 or width <= 0:
        raise GeometryError("notch is thinner than one voxel; refine dims or enlarge it")
    if cut >= b - a:
        raise GeometryError("notch closes the channel")
    if 2 * width > n1:
        raise GeometryError("notches overlap; notch_width must not exceed 1/2")
    lo = int(round((0.25 - notch_width / 2) * n1))
    hi = int(round((0.75 - notch_width / 2) * n1))
    mask[lo:lo + width, a:a + cut] = SOLID
    mask[hi:hi + width, b - cut:b] = SOLID
    return mask


def build_preset(name: str, params: Mapping | None = None, **kwargs) -> ReferenceCell:
    """Build one of the canonical geometries.

    Parameters
    ----------
    name : str
        One of :data:`PRESETS`.
    params : mapping, optional
        Geometry parameters; keyword arguments override entries.  Common keys
        are ``dims``, ``lengths``, ``sigma``, ``epsilon`` and ``alpha``.

        straight_channel_2d / straight_channel_3d
            ``p``: channel height as a fraction of the cell (the porosity).
            The pore is a slab normal to x2.
        perturbed_channel_3d
            ``p`` (unperturbed channel height, default 0.5), ``notch_depth``
            (fraction of the channel height blocked by each notch, default
            0.75), ``notch_width`` (fraction of the x1 period, default 1/8).
            The two notches are staggered on opposite walls.
        rectangle_pore_2d
            ``a``, ``b``: pore side lengths along x1 and x2, centred.
        circular_inclusion_2d
            ``radius``: solid disk centred in the cell.

    Returns
    -------
    ReferenceCell
    """
    kw = dict(params or {})
    kw.update(kwargs)
    sigma = kw.pop("sigma", 0.0)
    epsilon = kw.pop("epsilon", 1.0)
    alpha = kw.pop("alpha", 0.0)
    normal = None
    if name == "straight_channel_2d":
        dims = tuple(kw.pop("dims", (64, 64)))
        lengths = tuple(kw.pop("lengths", (1.0, 1.0)))
        mask = _straight_channel(dims, kw.pop("p", 0.5))
    elif name == "straight_channel_3d":
        dims = tuple(kw.pop("dims", (64, 64, 64)))
        lengths = tuple(kw.pop("lengths", (1.0, 1.0, 1.0)))
        mask = _straight_channel(dims, kw.pop("p", 0.5))
    elif name == "perturbed_channel_3d":
        dims = tuple(kw.pop("dims", (48, 48, 48)))
        lengths = tuple(kw.pop("lengths", (1.0, 1.0, 1.0)))
        mask = _perturbed_channel(dims, kw.pop("p", 0.5), kw.pop("notch_depth", 0.75),
                                  kw.pop("notch_width", 0.125))
    elif name == "rectangle_pore_2d":
        dims = tuple(kw.pop("dims", (64, 64)))
        lengths = tuple(kw.pop("lengths", (1.0, 1.0)))
        a = kw.pop("a", 0.5)
        b = kw.pop("b", a)
        x, y = _centers(dims, lengths)
        mask = ((np.abs(x - lengths[0] / 2) < a / 2) & (np.abs(y - lengths[1] / 2) < b / 2))
    elif name == "circular_inclusion_2d":
        dims = tuple(kw.pop("dims", (64, 64)))
        lengths = tuple(kw.pop("lengths", (1.0, 1.0)))
        radius = kw.pop("radius", 0.25)
        x, y = _centers(dims, lengths)
        c = np.asarray(lengths) / 2
        mask = (x - c[0]) ** 2 + (y - c[1]) ** 2 >= radius ** 2

        def normal(points, c=c):
            v = points - c
            return v / np.linalg.norm(v, axis=1, keepdims=True)
    else:
        raise GeometryError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    if kw:
        raise GeometryError(f"unused parameters for {name}: {sorted(kw)}")
    return ReferenceCell.from_mask(mask, lengths, sigma=sigma, epsilon=epsilon,
                                   alpha=alpha, normal=normal)


# ---------------------------------------------------------------------------
# raster files


def save_raster(cell: ReferenceCell, path) -> None:
    """Write ``cell`` in the plain-text raster format read by :func:`load_raster`.

    A single ``sigma`` header line is written when the surface charge is
    uniform over the interface; otherwise the header holds 0 and a
    ``facets`` table lists every facet value.
    """
    values = np.concatenate([s[m] for s, m in zip(cell.sigma_s, cell.interface)])
    uniform = values.size == 0 or np.all(values == values[0])
    lines = [
        " ".join(str(v) for v in (cell.ndim, *cell.dims)),
        "lengths " + " ".join(repr(v) for v in cell.lengths),
        f"sigma {repr(float(values[0])) if uniform and values.size else 0.0}",
    ]
    flat = cell.phase.ravel(order="F")
    row = max(cell.dims[0], 1)
    lines += [" ".join(map(str, flat[i:i + row])) for i in range(0, flat.size, row)]
    if not uniform:
        rows = []
        for k, (s, m) in enumerate(zip(cell.sigma_s, cell.interface)):
            for idx in np.argwhere(m):
                rows.append(f"{k} " + " ".join(map(str, idx)) + f" {repr(float(s[tuple(idx)]))}")
        lines.append(f"facets {len(rows)}")
        lines += rows
    Path(path).write_text("\n".join(lines) + "\n")


def load_raster(path, epsilon: float = 1.0, alpha: float = 0.0) -> ReferenceCell:
    """Read a raster cell file.

    Format::

        d n1 n2 [n3]
        lengths l1 l2 [l3]
        sigma <value>
        <n1*n2*[n3] entries of 0/1, x fastest>
        [facets <m>
         <axis> <i1> <i2> [<i3>] <sigma>  (m lines)]
    """
    text = Path(path).read_text().split("\n")
    lines = [ln.strip() for ln in text if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        head = [int(v) for v in lines[0].split()]
        d, dims = head[0], tuple(head[1:])
        if d not in (2, 3) or len(dims) != d:
            raise ValueError
        lw = lines[1].split()
        if lw[0] != "lengths" or len(lw) != d + 1:
            raise ValueError
        lengths = tuple(float(v) for v in lw[1:])
        sw = lines[2].split()
        if sw[0] != "sigma" or len(sw) != 2:
            raise ValueError
        sigma = float(sw[1])
    except (ValueError, IndexError):
        raise GeometryError(f"{path}: malformed raster header") from None
    body = lines[3:]
    table_at = next((i for i, ln in enumerate(body) if ln.startswith("facets")), None)
    entries = " ".join(body if table_at is None else body[:table_at]).split()
    n = int(np.prod(dims))
    if len(entries) != n:
        raise GeometryError(f"{path}: header promises {n} entries, found {len(entries)}")
    if any(e not in ("0", "1") for e in entries):
        raise GeometryError(f"{path}: phase entries must be 0 or 1")
    phase = np.array(entries, dtype=np.uint8).reshape(dims, order="F")
    if table_at is None:
        return ReferenceCell.from_mask(phase, lengths, sigma=sigma, epsilon=epsilon, alpha=alpha)
    interface = _interface_masks(phase)
    sig = [np.zeros(dims) for _ in range(d)]
    try:
        m = int(body[table_at].split()[1])
        rows = body[table_at + 1:]
        if len(rows) != m:
            raise ValueError
        for row in rows:
            parts = row.split()
            k, idx, val = int(parts[0]), tuple(int(v) for v in parts[1:1 + d]), float(parts[1 + d])
            if not interface[k][idx]:
                raise GeometryError(f"{path}: facet {k} {idx} is not on the pore-solid interface")
            sig[k][idx] = val
    except (ValueError, IndexError):
        raise GeometryError(f"{path}: malformed facets table") from None
    return ReferenceCell.from_mask(phase, lengths, sigma=tuple(sig), epsilon=epsilon, alpha=alpha)
