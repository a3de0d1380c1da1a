"""The full two-timescale design on the published optimization scenario.

Port selection, RZF regularizer and RIS phases are all chosen from
statistical CSI only; the precoder alone would use instantaneous CSI. The
joint loop alternates Frank-Wolfe port selection with (z, Phi) alternating
optimization, then the best recorded iterate wins. A Monte-Carlo run
confirms the deterministic objective at the returned design.
"""

import numpy as np

from fasris import empirical_esr, joint_optimize, alternating_optimization
from fasris.scenarios import fig3_scenario, uniform_selection

scenario, M = fig3_scenario(80.0)
M_tot = scenario.correlations.R_tot.shape[0]
L = scenario.dims.L
print(f"scenario: {scenario.dims.K} users, {M} of {M_tot} ports, "
      f"{L} RIS elements, 1/sigma^2 = 80 dB")

s, z, phases, report, trace = joint_optimize(scenario, M, T_iter=1)
print(f"\njoint design: ESR = {report.esr:.3f} bit/s/Hz")
print(f"  z* = {z:.3e} (K sigma^2/M = {scenario.dims.K * scenario.sigma2 / M:.3e})")
print(f"  ports: {np.flatnonzero(s)}")

s_uni = uniform_selection(M, M_tot)
z_u, ph_u, esr_u, _ = alternating_optimization(scenario, s_uni, np.zeros(L))
print(f"\nuniform selection + same (z, Phi) optimization: {esr_u:.3f} bit/s/Hz")
print(f"port-selection gain: {report.esr - esr_u:+.3f} bit/s/Hz "
      f"({report.esr / esr_u:.3f}x)")

confirm = empirical_esr(scenario, s, phases.phi, "rzf", 2000, 5, z)
print(f"\nMonte-Carlo confirmation: {confirm.mean:.3f} "
      f"+- {confirm.ci95:.3f} bit/s/Hz "
      f"({abs(confirm.mean - report.esr) / confirm.mean:.2%} from the "
      f"deterministic value)")
