"""Macro PNP approaching the electroneutral thin double-layer model as epsilon shrinks."""
import math

import numpy as np

from pnph.limits import thin_dl_solve
from pnph.macro_solver import AppliedCurrent, BoundarySpec, MacroGrid, MacroProblem, MacroState
from pnph.tensors import straight_channel_tensors

p, rho_s, current, n, dt, steps = 0.5, -0.2, 0.5, 100, 2e-3, 50
grid = MacroGrid((n,), axes=(0,))
bc = BoundarySpec({"x-": AppliedCurrent(current), "x+": AppliedCurrent(-current)})
ref = thin_dl_solve(grid, 1.0, straight_channel_tensors(p, rho_s=rho_s), bc, dt, steps)
phi_ref = ref.phi[-1] - ref.phi[-1].mean()

print(f"{'eps':>8} {'L2(c)':>10} {'L2(phi)':>10}")
for eps in (0.1, 0.05, 0.025, 0.0125):
    prob = MacroProblem(grid, straight_channel_tensors(p, epsilon=eps, rho_s=rho_s), bc)
    s = MacroState(grid, 1.0 + ref.rho, 1.0 - ref.rho, ref.phi[0])
    for _ in range(steps):
        s = prob.step(s, dt, mode="implicit")
    dc = math.sqrt(((0.5 * (s.c_plus + s.c_minus) - ref.c[-1]) ** 2).mean())
    dphi = math.sqrt(((s.phi - s.phi.mean() - phi_ref) ** 2).mean())
    print(f"{eps:8.4f} {dc:10.2e} {dphi:10.2e}")
