"""Finite-volume graph shared by the macro and micro drift-diffusion solvers.

A problem is a set of Poisson cells joined by faces.  Ion species live on a
subset of those cells.  Drift-diffusion fluxes use the Scharfetter-Gummel
form

    F_ij = T [B(x) c_i - B(-x) c_j],   x = z r (phi_j - phi_i),

with ``B(x) = x / (exp(x) - 1)``, ``T`` the diffusive transmissibility and
``r`` the mobility-to-diffusivity ratio of the face.  ``F_ij`` is the flux
leaving cell ``i`` towards ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import CompatibilityError, PhysicalRegimeError, SolverError

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")

_SMALL = 1e-3


def bernoulli(x):
    """``B(x) = x / (exp(x) - 1)`` with a series near zero."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SMALL
    xs = np.where(small, 1.0, x)
    with np.errstate(over="ignore"):
        big = xs / np.expm1(xs)
    x2 = x * x
    series = 1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
    return np.where(small, series, big)


def bernoulli_prime(x):
    """Derivative of :func:`bernoulli`."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SMALL
    xs = np.where(small, 1.0, x)
    b = bernoulli(xs)
    big = b * (1.0 - b - xs) / xs
    series = -0.5 + x / 6.0 - x ** 3 / 180.0
    return np.where(small, series, big)


@dataclass
class ResolvedBC:
    """Boundary data broadcast onto the boundary faces of a graph."""

    p_dirichlet: np.ndarray
    p_value: np.ndarray
    s_dirichlet: np.ndarray
    s_cplus: np.ndarray
    s_cminus: np.ndarray
    s_phi: np.ndarray
    s_current: np.ndarray  # inward charge flux density per species boundary face


@dataclass
class FVGraph:
    """Cell/face connectivity with coefficients.

    Poisson cells are numbered ``0..n_p-1``; species cells ``0..n_s-1`` map
    to Poisson cells through ``species``.  Boundary faces store a
    transmissibility to a ghost value located on the face itself.
    """

    volume: np.ndarray
    pf_i: np.ndarray
    pf_j: np.ndarray
    pf_T: np.ndarray
    pb_cell: np.ndarray
    pb_T: np.ndarray
    pb_face: np.ndarray
    species: np.ndarray
    sf_i: np.ndarray
    sf_j: np.ndarray
    sf_T: np.ndarray
    sf_r: np.ndarray
    sb_cell: np.ndarray
    sb_T: np.ndarray
    sb_r: np.ndarray
    sb_area: np.ndarray
    sb_face: np.ndarray
    capacity: np.ndarray
    q_weight: np.ndarray
    fixed_charge: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_p(self) -> int:
        return len(self.volume)

    @property
    def n_s(self) -> int:
        return len(self.species)

    # -- boundary data ----------------------------------------------------

    def resolve(self, bc) -> ResolvedBC:
        npb, nsb = len(self.pb_cell), len(self.sb_cell)
        out = ResolvedBC(np.zeros(npb, bool), np.zeros(npb), np.zeros(nsb, bool),
                         np.zeros(nsb), np.zeros(nsb), np.zeros(nsb), np.zeros(nsb))
        for fid, name in enumerate(FACES):
            cond = bc.condition(name)
            pm = self.pb_face == fid
            sm = self.sb_face == fid
            if cond.kind == "DIRICHLET":
                out.p_dirichlet[pm] = True
                out.p_value[pm] = cond.phi
                out.s_dirichlet[sm] = True
                out.s_cplus[sm] = cond.c_plus
                out.s_cminus[sm] = cond.c_minus
                out.s_phi[sm] = cond.phi
            elif cond.kind == "APPLIED_CURRENT":
                out.s_current[sm] = cond.value
        return out

    # -- Poisson ---------------------------------------------------------

    def poisson_matrix(self, rb: ResolvedBC) -> sp.csr_matrix:
        n = self.n_p
        i, j, T = self.pf_i, self.pf_j, self.pf_T
        diag = np.bincount(i, T, n) + np.bincount(j, T, n)
        dm = rb.p_dirichlet
        diag += np.bincount(self.pb_cell[dm], self.pb_T[dm], n)
        A = sp.coo_matrix((np.concatenate([-T, -T, diag]),
                           (np.concatenate([i, j, np.arange(n)]),
                            np.concatenate([j, i, np.arange(n)]))), shape=(n, n))
        return A.tocsr()

    def poisson_components(self, rb: ResolvedBC):
        """Component labels and a per-component flag for "no Dirichlet face"."""
        key = ("comp", rb.p_dirichlet.tobytes())
        if key not in self._cache:
            n = self.n_p
            G = sp.coo_matrix((np.ones(len(self.pf_i)), (self.pf_i, self.pf_j)), shape=(n, n))
            nc, labels = connected_components(G, directed=False)
            anchored = np.zeros(nc, bool)
            anchored[labels[self.pb_cell[rb.p_dirichlet]]] = True
            self._cache[key] = (labels, ~anchored)
        return self._cache[key]

    def charge(self, cp, cm) -> np.ndarray:
        """Poisson right-hand side from species and fixed charge (integrated)."""
        q = self.fixed_charge.copy()
        np.add.at(q, self.species, self.q_weight * (cp - cm))
        return q

    def poisson_rhs(self, q, rb: ResolvedBC) -> np.ndarray:
        dm = rb.p_dirichlet
        return q + np.bincount(self.pb_cell[dm], self.pb_T[dm] * rb.p_value[dm], self.n_p)

    def solve_poisson(self, q, rb: ResolvedBC, phi_ref=None, rtol=1e-9) -> np.ndarray:
        """Solve the linear Poisson problem for integrated charge ``q``.

        Floating components (no Dirichlet face) must be neutral; their gauge
        keeps the volume mean of ``phi_ref`` (zero if not given).
        """
        A = self.poisson_matrix(rb)
        b = self.poisson_rhs(q, rb)
        labels, floating = self.poisson_components(rb)
        pins = self._pins(labels, floating)
        self._check_neutral(q, labels, floating, rtol)
        keep = np.ones(self.n_p, bool)
        keep[pins] = False
        phi = np.zeros(self.n_p)
        Akk = A[keep][:, keep].tocsc()
        phi[keep] = spla.spsolve(Akk, b[keep]) if keep.any() else phi[keep]
        return self._gauge(phi, labels, floating, phi_ref)

    def _pins(self, labels, floating):
        _, first = np.unique(labels, return_index=True)
        return first[floating].astype(np.int64)

    def _check_neutral(self, q, labels, floating, rtol):
        if not floating.any():
            return
        nc = len(floating)
        tot = np.bincount(labels, q, nc)
        mag = np.bincount(labels, np.abs(q), nc)
        bad = floating & (np.abs(tot) > rtol * mag + 1e-14)
        if bad.any():
            raise CompatibilityError(
                f"closed region carries net charge {tot[bad][0]:.3e}; add a Dirichlet "
                "boundary for phi or start from a neutral state")

    def _gauge(self, phi, labels, floating, phi_ref):
        if not floating.any():
            return phi
        nc = len(floating)
        vol = np.bincount(labels, self.volume, nc)
        mean = np.bincount(labels, self.volume * phi, nc) / vol
        target = np.zeros(nc) if phi_ref is None else np.bincount(
            labels, self.volume * phi_ref, nc) / vol
        shift = np.where(floating, target - mean, 0.0)
        return phi + shift[labels]

    # -- transport ------------------------------------------------------

    def transport_system(self, phi, z: int, rb: ResolvedBC, dt: float):
        """Matrix and boundary source of one implicit SG step with fixed ``phi``.

        Returns ``(A, s)`` such that the update solves
        ``A c_new = capacity/dt * c_old + s``.
        """
        n = self.n_s
        ps = phi[self.species]
        i, j, T = self.sf_i, self.sf_j, self.sf_T
        x = z * self.sf_r * (ps[j] - ps[i])
        bp, bm = T * bernoulli(x), T * bernoulli(-x)
        diag = self.capacity / dt + np.bincount(i, bp, n) + np.bincount(j, bm, n)
        s = np.zeros(n)
        dm = rb.s_dirichlet
        if dm.any():
            c_d = np.where(z > 0, rb.s_cplus, rb.s_cminus)[dm]
            cell = self.sb_cell[dm]
            xb = z * self.sb_r[dm] * (rb.s_phi[dm] - ps[cell])
            Tb = self.sb_T[dm]
            diag += np.bincount(cell, Tb * bernoulli(xb), n)
            s += np.bincount(cell, Tb * bernoulli(-xb) * c_d, n)
        s += np.bincount(self.sb_cell, 0.5 * z * rb.s_current * self.sb_area, n)
        A = sp.coo_matrix((np.concatenate([-bm, -bp, diag]),
                           (np.concatenate([i, j, np.arange(n)]),
                            np.concatenate([j, i, np.arange(n)]))), shape=(n, n))
        return A.tocsc(), s

    def face_fluxes(self, c, phi, z: int):
        """Interior SG fluxes ``F_ij`` (species numbering)."""
        ps = phi[self.species]
        i, j = self.sf_i, self.sf_j
        x = z * self.sf_r * (ps[j] - ps[i])
        return self.sf_T * (bernoulli(x) * c[i] - bernoulli(-x) * c[j])

    def boundary_inflow(self, c, phi, z: int, rb: ResolvedBC) -> float:
        """Total species inflow through the boundary."""
        ps = phi[self.species]
        total = float(np.sum(0.5 * z * rb.s_current * self.sb_area))
        dm = rb.s_dirichlet
        if dm.any():
            c_d = np.where(z > 0, rb.s_cplus, rb.s_cminus)[dm]
            cell = self.sb_cell[dm]
            xb = z * self.sb_r[dm] * (rb.s_phi[dm] - ps[cell])
            total -= float(np.sum(self.sb_T[dm] * (bernoulli(xb) * c[cell] - bernoulli(-xb) * c_d)))
        return total

    def semi_implicit_step(self, cp, cm, phi_old, rb, dt, frozen_phi=None):
        """Poisson with the current charge, then implicit SG transport."""
        if frozen_phi is None:
            phi = self.solve_poisson(self.charge(cp, cm), rb, phi_ref=phi_old)
        else:
            phi = np.asarray(frozen_phi, float)
        out = []
        for z, c in ((1, cp), (-1, cm)):
            A, s = self.transport_system(phi, z, rb, dt)
            out.append(spla.spsolve(A, self.capacity / dt * c + s))
        return out[0], out[1], phi

    # -- fully implicit Newton -----------------------------------------

    def _residual_jacobian(self, U, c_old, rb, dt, q_extra):
        n, m = self.n_s, self.n_p
        cp, cm, phi = U[:n], U[n:2 * n], U[2 * n:]
        ps = phi[self.species]
        rows, cols, vals = [], [], []
        R = np.zeros(2 * n + m)
        i, j, T, r = self.sf_i, self.sf_j, self.sf_T, self.sf_r
        si, sj = self.species[i], self.species[j]
        for s_idx, (z, c, c0) in enumerate(((1, cp, c_old[0]), (-1, cm, c_old[1]))):
            off = s_idx * n
            x = z * r * (ps[j] - ps[i])
            Bp, Bm = bernoulli(x), bernoulli(-x)
            F = T * (Bp * c[i] - Bm * c[j])
            dFdx = T * (bernoulli_prime(x) * c[i] + bernoulli_prime(-x) * c[j])
            Rs = self.capacity / dt * (c - c0) + np.bincount(i, F, n) - np.bincount(j, F, n)
            Rs -= np.bincount(self.sb_cell, 0.5 * z * rb.s_current * self.sb_area, n)
            # d/dc
            rows += [off + i, off + i, off + j, off + j]
            cols += [off + i, off + j, off + i, off + j]
            vals += [T * Bp, -T * Bm, -T * Bp, T * Bm]
            # d/dphi  (x depends on phi_j - phi_i)
            g = dFdx * z * r
            rows += [off + i, off + i, off + j, off + j]
            cols += [2 * n + sj, 2 * n + si, 2 * n + sj, 2 * n + si]
            vals += [g, -g, -g, g]
            diag = self.capacity / dt
            dm = rb.s_dirichlet
            if dm.any():
                c_d = (rb.s_cplus if z > 0 else rb.s_cminus)[dm]
                cell = self.sb_cell[dm]
                xb = z * self.sb_r[dm] * (rb.s_phi[dm] - ps[cell])
                Tb = self.sb_T[dm]
                Fb = Tb * (bernoulli(xb) * c[cell] - bernoulli(-xb) * c_d)
                Rs += np.bincount(cell, Fb, n)
                diag = diag + np.bincount(cell, Tb * bernoulli(xb), n)
                gb = -z * self.sb_r[dm] * Tb * (bernoulli_prime(xb) * c[cell]
                                                + bernoulli_prime(-xb) * c_d)
                rows.append(off + cell)
                cols.append(2 * n + self.species[cell])
                vals.append(gb)
            rows.append(off + np.arange(n))
            cols.append(off + np.arange(n))
            vals.append(np.broadcast_to(diag, (n,)).copy())
            R[off:off + n] = Rs
        A = self.poisson_matrix(rb)
        q = self.charge(cp, cm) + q_extra
        R[2 * n:] = A @ phi - self.poisson_rhs(q, rb)
        Ac = A.tocoo()
        rows.append(2 * n + Ac.row)
        cols.append(2 * n + Ac.col)
        vals.append(Ac.data)
        rows += [2 * n + self.species, 2 * n + self.species]
        cols += [np.arange(n), n + np.arange(n)]
        vals += [-self.q_weight, self.q_weight.copy()]
        J = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(2 * n + m, 2 * n + m)).tocsr()
        return R, J

    def implicit_step(self, cp, cm, phi, rb, dt, tol=1e-10, maxiter=50, q_extra=0.0):
        """Backward-Euler Newton step on ``(c+, c-, phi)``."""
        n = self.n_s
        labels, floating = self.poisson_components(rb)
        self._check_neutral(self.charge(cp, cm) + q_extra, labels, floating, 1e-9)
        pins = self._pins(labels, floating)
        U = np.concatenate([cp, cm, phi]).astype(float)
        c_old = (np.asarray(cp, float).copy(), np.asarray(cm, float).copy())
        scale = max(1.0, float(np.abs(U[:2 * n]).max()))
        history = []
        for it in range(maxiter):
            R, J = self._residual_jacobian(U, c_old, rb, dt, q_extra)
            if pins.size:
                rows_pinned = 2 * n + pins
                keep = np.ones(J.shape[0])
                keep[rows_pinned] = 0.0
                J = sp.diags(keep) @ J + sp.coo_matrix(
                    (np.ones(pins.size), (rows_pinned, rows_pinned)), shape=J.shape)
                R[rows_pinned] = 0.0
            dU = spla.spsolve(J.tocsc(), -R)
            if not np.all(np.isfinite(dU)):
                raise SolverError("Newton update is not finite", history=history)
            lam = 1.0
            while lam > 1e-4:
                trial = U + lam * dU
                if trial[:2 * n].min() >= 0:
                    break
                lam *= 0.5
            U = U + lam * dU
            step = float(np.abs(lam * dU).max())
            history.append(step)
            if step <= tol * scale and lam == 1.0:
                break
        else:
            raise SolverError(f"Newton did not converge in {maxiter} iterations "
                              f"(last update {history[-1]:.3e})", residual=history[-1],
                              history=history)
        cp_n, cm_n, phi_n = U[:n], U[n:2 * n], U[2 * n:]
        return cp_n, cm_n, phi_n

    def check_positive(self, cp, cm, tol=0.0):
        for name, c in (("c_plus", cp), ("c_minus", cm)):
            k = int(np.argmin(c))
            if c[k] < -tol:
                raise PhysicalRegimeError(f"{name} became negative ({c[k]:.3e}) at node {k}",
                                          node=k)
