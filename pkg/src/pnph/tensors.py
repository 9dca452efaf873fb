"""Effective tensors, material tensor, fluxes and tortuosity diagnostics.

Tensor entries are computed by face quadrature consistent with the corrector
discretization.  For a face ``f`` normal to axis ``k`` with face coefficient
``k_f`` the discrete flux of the ``l``-th corrector problem is

    Phi_f^l = k_f * (delta_kl - G_f xi^l),   G_f xi = (xi_j - xi_i) / h_k

and every face carries the volume of one voxel.  Summing ``Phi`` over all
faces normal to ``k`` gives the permittivity tensor, which equals the discrete
energy form and is therefore symmetric positive semidefinite.  The pore
tensors use the pore-pore faces plus half of every pore-solid face.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .cell_solver import (
    DEFAULT_TOL, ION, POTENTIAL, CorrectorField, face_coefficients, permittivity_field,
    solve_correctors,
)
from .geometry import ReferenceCell, homogenized_surface_charge, porosity

logger = logging.getLogger(__name__)

DIFFUSION = "DIFFUSION"
MOBILITY = "MOBILITY"
PERMITTIVITY = "PERMITTIVITY"

PETERSEN = "PETERSEN"
ARIS_SATTERFIELD = "ARIS_SATTERFIELD"
CONSTRICTIVITY = "CONSTRICTIVITY"
VARIANTS = (PETERSEN, ARIS_SATTERFIELD, CONSTRICTIVITY)

ZERO_EIG = 1e-12


@dataclass(frozen=True, eq=False)
class EffectiveTensors:
    """Homogenized coefficients of one reference cell.

    Attributes
    ----------
    D_hat, M_hat, eps_hat : ndarray, shape (d, d)
        Diffusion, mobility and permittivity tensors.
    p : float
        Porosity.
    rho_s : float
        Homogenized surface charge.
    epsilon, alpha : float
        Cell parameters the tensors were computed with.
    """

    D_hat: np.ndarray
    M_hat: np.ndarray
    eps_hat: np.ndarray
    p: float
    rho_s: float = 0.0
    epsilon: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        for name in ("D_hat", "M_hat", "eps_hat"):
            a = np.array(getattr(self, name), dtype=float, copy=True)
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ValueError(f"{name} must be a square matrix")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not 0 < self.p <= 1:
            raise ValueError(f"porosity must lie in (0, 1], got {self.p}")

    @property
    def ndim(self) -> int:
        return self.D_hat.shape[0]

    def with_rho_s(self, rho_s: float) -> "EffectiveTensors":
        return EffectiveTensors(self.D_hat, self.M_hat, self.eps_hat, self.p, rho_s,
                                self.epsilon, self.alpha)

    def invariant_violations(self, tol: float = 1e-10) -> list:
        """Names of violated structural invariants (empty if all hold)."""
        out = []
        for name in ("D_hat", "M_hat", "eps_hat"):
            a = getattr(self, name)
            scale = max(1.0, np.abs(a).max())
            if np.abs(a - a.T).max() > tol * scale:
                out.append(f"{name} not symmetric")
            if np.linalg.eigvalsh(0.5 * (a + a.T)).min() < -tol * scale:
                out.append(f"{name} not positive semidefinite")
        diag = np.diag(self.D_hat)
        if diag.min() < -tol or diag.max() > 1 + tol:
            out.append("D_hat diagonal outside [0, 1]")
        if self.alpha == 0:
            if np.abs(self.D_hat - self.M_hat).max() > tol:
                out.append("D_hat != M_hat for an insulating matrix")
            if np.abs(self.eps_hat - self.epsilon ** 2 * self.D_hat).max() > tol:
                out.append("eps_hat != eps^2 D_hat for an insulating matrix")
        return out

    def to_dict(self) -> dict:
        return {
            "p": self.p, "rho_s": self.rho_s, "epsilon": self.epsilon, "alpha": self.alpha,
            "D_hat": self.D_hat.tolist(), "M_hat": self.M_hat.tolist(),
            "eps_hat": self.eps_hat.tolist(),
        }


def _face_fluxes(cell, xi_values, l, kf):
    """Per-axis arrays of ``Phi_f`` for the corrector of direction ``l``."""
    h = cell.spacing
    out = []
    for k in range(cell.ndim):
        g = (np.roll(xi_values, -1, axis=k) - xi_values) / h[k]
        out.append(kf[k] * ((1.0 if k == l else 0.0) - g))
    return out


def _check_family(correctors, family, d):
    want = ION if family == DIFFUSION else POTENTIAL
    if len(correctors) != d:
        raise ValueError(f"{family} needs correctors for all {d} directions, got {len(correctors)}")
    for l, c in enumerate(correctors):
        if c.family != want:
            raise ValueError(f"{family} requires {want} correctors, got {c.family}")
        if c.direction != l:
            raise ValueError(f"corrector {l} solves direction {c.direction}")


def assemble_tensor(cell: ReferenceCell, correctors: Sequence[CorrectorField], family: str) -> np.ndarray:
    """Effective tensor of one family from the correctors of all directions.

    Parameters
    ----------
    cell : ReferenceCell
    correctors : sequence of CorrectorField
        One per axis, ordered by direction.  POTENTIAL correctors for
        PERMITTIVITY and MOBILITY, ION correctors for DIFFUSION.
    family : {"DIFFUSION", "MOBILITY", "PERMITTIVITY"}

    Returns
    -------
    ndarray, shape (d, d)
        Entry ``[k, l]`` averages the ``k`` component of the ``l``-th flux.
    """
    d = cell.ndim
    _check_family(correctors, family, d)
    coeff = permittivity_field(cell)
    kf = face_coefficients(coeff)
    pore = cell.pore
    vol = cell.voxel_volume
    out = np.zeros((d, d))
    eps2 = cell.epsilon ** 2
    for l, c in enumerate(correctors):
        if family == PERMITTIVITY:
            phi = _face_fluxes(cell, c.values, l, kf)
            for k in range(d):
                out[k, l] = vol * phi[k].sum()
            continue
        xi33 = c.values if family == MOBILITY else c.xi33.values
        phi_iface = _face_fluxes(cell, xi33, l, kf)
        unit = [np.where(pore & np.roll(pore, -1, axis=k), 1.0, 0.0) for k in range(d)]
        phi_pore = _face_fluxes(cell, c.values, l, unit)
        for k in range(d):
            iface = cell.interface[k]
            out[k, l] = vol * (phi_pore[k].sum() + 0.5 * phi_iface[k][iface].sum() / eps2)
    return out / cell.volume


def effective_tensors(cell: ReferenceCell, tol: float = DEFAULT_TOL, method="cg") -> EffectiveTensors:
    """Solve all cell problems and assemble ``D_hat``, ``M_hat``, ``eps_hat``."""
    xi33, xiii = solve_correctors(cell, tol=tol, method=method)
    return EffectiveTensors(
        D_hat=assemble_tensor(cell, xiii, DIFFUSION),
        M_hat=assemble_tensor(cell, xi33, MOBILITY),
        eps_hat=assemble_tensor(cell, xi33, PERMITTIVITY),
        p=porosity(cell), rho_s=homogenized_surface_charge(cell),
        epsilon=cell.epsilon, alpha=cell.alpha,
    )


def straight_channel_tensors(p: float, d: int = 2, epsilon: float = 1.0, rho_s: float = 0.0,
                             axis: int = 1) -> EffectiveTensors:
    """Closed-form tensors of a slab channel normal to ``axis`` with ``alpha = 0``."""
    D = p * np.eye(d)
    D[axis, axis] = 0.0
    return EffectiveTensors(D, D.copy(), epsilon ** 2 * D, p, rho_s, epsilon, 0.0)


# ---------------------------------------------------------------------------
# material tensor and fluxes


@dataclass(frozen=True)
class StateVector:
    """Field vector ``Q = (c+, c-, phi)``; entries are scalars or arrays."""

    c_plus: object
    c_minus: object
    phi: object

    def __post_init__(self):
        if np.any(np.asarray(self.c_plus) < 0) or np.any(np.asarray(self.c_minus) < 0):
            raise ValueError("concentrations must be non-negative")

    def __iter__(self):
        return iter((self.c_plus, self.c_minus, self.phi))


def _as_state(Q):
    return Q if isinstance(Q, StateVector) else StateVector(*Q)


def material_tensor(t: EffectiveTensors, Q, insulating: bool = False) -> np.ndarray:
    """Block material tensor ``S(Q)`` with ``J = S(Q) grad Q``.

    Blocks::

        [ D   0   c+ M ]
        [ 0   D  -c- M ]
        [ 0   0   eps  ]

    Parameters
    ----------
    t : EffectiveTensors
    Q : StateVector or (c+, c-, phi)
        Scalars give a ``(3d, 3d)`` matrix; arrays broadcast to
        ``(*shape, 3d, 3d)``.
    insulating : bool
        Use the insulating-matrix form with ``M = D`` and ``eps = eps^2 D``.
    """
    Q = _as_state(Q)
    d = t.ndim
    D = t.D_hat
    M = D if insulating else t.M_hat
    E = t.epsilon ** 2 * D if insulating else t.eps_hat
    cp = np.asarray(Q.c_plus, dtype=float)
    cm = np.asarray(Q.c_minus, dtype=float)
    shape = np.broadcast(cp, cm).shape
    S = np.zeros(shape + (3 * d, 3 * d))
    S[..., :d, :d] = D
    S[..., d:2 * d, d:2 * d] = D
    S[..., 2 * d:, 2 * d:] = E
    S[..., :d, 2 * d:] = cp[..., None, None] * M
    S[..., d:2 * d, 2 * d:] = -cm[..., None, None] * M
    return S


def fluxes(t: EffectiveTensors, Q, gradQ) -> np.ndarray:
    """Fluxes ``(J+, J-, J_phi)`` for gradients ``gradQ`` of shape (3, ..., d).

    ``J+- = D grad c+- +- c+- M grad phi`` and ``J_phi = eps grad phi``.
    """
    Q = _as_state(Q)
    g = np.asarray(gradQ, dtype=float)
    if g.shape[0] != 3 or g.shape[-1] != t.ndim:
        raise ValueError(f"gradQ must have shape (3, ..., {t.ndim})")
    Dg = lambda A, v: v @ A.T  # noqa: E731
    cp = np.asarray(Q.c_plus, float)[..., None]
    cm = np.asarray(Q.c_minus, float)[..., None]
    Mphi = Dg(t.M_hat, g[2])
    return np.stack([
        Dg(t.D_hat, g[0]) + cp * Mphi,
        Dg(t.D_hat, g[1]) - cm * Mphi,
        Dg(t.eps_hat, g[2]),
    ])


# ---------------------------------------------------------------------------
# coordinate transform


@dataclass(frozen=True, eq=False)
class CoordinateTransform:
    """Eigen-based ``D^{-1/2}`` on the range of a PSD tensor.

    Attributes
    ----------
    eigenvalues, eigenvectors : ndarray
        Columns of ``eigenvectors`` ordered by their dominant coordinate axis.
    scales : ndarray
        ``1/sqrt(lambda)`` per dominant axis, NaN on parameter axes.
    parameter_axes : tuple of int
        Dominant axes of (numerically) zero eigenvalues; these coordinates
        are stretched to infinity and are treated as parameters.
    matrix : ndarray
        ``V diag(scales) V^T`` with zero in place of NaN.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    scales: np.ndarray
    parameter_axes: tuple
    matrix: np.ndarray

    def apply(self, x) -> np.ndarray:
        """Map physical coordinates ``x`` (..., d) to transformed ones."""
        return np.asarray(x, float) @ self.matrix.T


def coordinate_transform(D_hat) -> CoordinateTransform:
    """Transform ``x -> D^{-1/2} x`` that turns ``div(D grad)`` into a Laplacian."""
    D = np.asarray(D_hat, float)
    w, V = np.linalg.eigh(0.5 * (D + D.T))
    order = np.argsort([np.argmax(np.abs(V[:, j])) for j in range(len(w))], kind="stable")
    w, V = w[order], V[:, order]
    V = V * np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(len(w))])
    scale = max(1.0, np.abs(w).max())
    zero = w < ZERO_EIG * scale
    s = np.where(zero, np.nan, 1.0 / np.sqrt(np.where(zero, 1.0, w)))
    matrix = (V * np.where(zero, 0.0, s)) @ V.T
    return CoordinateTransform(w, V, s, tuple(int(i) for i in np.flatnonzero(zero)), matrix)


# ---------------------------------------------------------------------------
# dimensional coefficients


class DimensionalTensors(NamedTuple):
    D_plus: np.ndarray
    D_minus: np.ndarray
    M_plus: np.ndarray
    M_minus: np.ndarray


def dimensionalize(t: EffectiveTensors, D_plus: float, D_minus: float, kT: float) -> DimensionalTensors:
    """Species tensors ``D+- D_hat`` and ``(D+- / kT) M_hat``."""
    if min(D_plus, D_minus, kT) <= 0:
        raise ValueError("D_plus, D_minus and kT must be positive")
    return DimensionalTensors(D_plus * t.D_hat, D_minus * t.D_hat,
                              (D_plus / kT) * t.M_hat, (D_minus / kT) * t.M_hat)


# ---------------------------------------------------------------------------
# tortuosity


@dataclass(frozen=True, eq=False)
class TortuosityResult:
    """Tortuosity and diffusibility tensors.

    Attributes
    ----------
    tau : ndarray
        ``inf`` on BLOCKED entries, 0 where the free-space numerator is 0.
    Q : ndarray
        Diffusibility; 0 where ``tau`` is 0 or BLOCKED.
    blocked : ndarray of bool
        Nonzero numerator over a zero denominator.
    defined : ndarray of bool
        Entries where both numerator and denominator are nonzero.
    variant : str
    """

    tau: np.ndarray
    Q: np.ndarray
    blocked: np.ndarray
    defined: np.ndarray
    variant: str

    def to_json_matrix(self) -> list:
        return [["BLOCKED" if b else float(v) for v, b in zip(row, brow)]
                for row, brow in zip(self.tau, self.blocked)]


def tortuosity(
    t: EffectiveTensors,
    variant: Literal["PETERSEN", "ARIS_SATTERFIELD", "CONSTRICTIVITY"] = PETERSEN,
    d_constrictivity=None,
    D_free: float = 1.0,
    zero_tol: float = 1e-12,
) -> TortuosityResult:
    """Tensorial tortuosity by componentwise division of free and pore diffusivity.

    With ``Df = D_free I`` and ``Dp = D_free D_hat``:

    PETERSEN           ``tau = sqrt(Df/Dp)``,      ``Q = 1/tau^2``
    ARIS_SATTERFIELD   ``tau = p Df/Dp``,          ``Q = p/tau``
    CONSTRICTIVITY     ``tau = sqrt(p d Df/Dp)``,  ``Q = p d/tau^2``

    Entries of ``Dp`` with magnitude below ``zero_tol`` count as zero.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown tortuosity variant {variant!r}")
    d = t.ndim
    Df = D_free * np.eye(d)
    Dp = D_free * t.D_hat
    num_nz = Df != 0
    den_nz = np.abs(Dp) > zero_tol
    defined = num_nz & den_nz
    blocked = num_nz & ~den_nz
    ratio = np.zeros((d, d))
    ratio[defined] = Df[defined] / Dp[defined]
    if variant == PETERSEN:
        factor = np.ones((d, d))
    elif variant == ARIS_SATTERFIELD:
        factor = np.full((d, d), t.p)
    else:
        if d_constrictivity is None:
            raise ValueError("CONSTRICTIVITY requires d_constrictivity")
        factor = t.p * np.broadcast_to(np.asarray(d_constrictivity, float), (d, d))
    tau = np.zeros((d, d))
    Q = np.zeros((d, d))
    if variant == ARIS_SATTERFIELD:
        tau[defined] = factor[defined] * ratio[defined]
        Q[defined] = t.p / tau[defined]
    else:
        tau[defined] = np.sqrt(factor[defined] * ratio[defined])
        Q[defined] = factor[defined] / tau[defined] ** 2
    tau[blocked] = np.inf
    return TortuosityResult(tau, Q, blocked, defined, variant)


def path_tortuosity(path_lengths: Sequence[float], endpoint_distance: float) -> float:
    """Mean path length over end-point distance.

    Evaluated as ``1 + mean(L_i - L_ab) / L_ab``, which is algebraically the
    plain ratio but keeps the excess lengths exact when paths are close to
    the straight line.
    """
    lengths = list(path_lengths)
    if not lengths:
        raise ValueError("path_lengths is empty")
    if endpoint_distance <= 0:
        raise ValueError("endpoint_distance must be positive")
    if min(lengths) < endpoint_distance:
        raise ValueError("a path is shorter than the end-point distance")
    excess = math.fsum(x - endpoint_distance for x in lengths)
    return 1.0 + excess / len(lengths) / endpoint_distance


def tensor_report(t: EffectiveTensors, d_constrictivity=None) -> dict:
    """JSON-ready report with tensors and tortuosity variants."""
    out = t.to_dict()
    tort = {}
    for v in VARIANTS:
        if v == CONSTRICTIVITY and d_constrictivity is None:
            continue
        r = tortuosity(t, v, d_constrictivity)
        tort[v] = {"tau": r.to_json_matrix(), "Q": r.Q.tolist()}
    out["tortuosity"] = tort
    return out


def write_tensor_report(t: EffectiveTensors, path, **kw) -> None:
    with open(path, "w") as fh:
        json.dump(tensor_report(t, **kw), fh, indent=2, sort_keys=True)
        fh.write("\n")
