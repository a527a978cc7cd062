"""
From link-level efficiencies to an allocation
=============================================

Runs the full chain (TR, PA, channel, power split, rectifier) on a reduced
frame, fits the affine efficiency model around one allocation and hands it
to the SCA allocator. Everything uses K=256 to stay quick.
"""

import numpy as np

from swipt_forge.allocation import LinkBudget, allocate, build_sca, calibrate_surrogate, re_region
from swipt_forge.pipeline import Scenario, measure_efficiencies
from swipt_forge.tone_reservation import TrParams

sc = Scenario(tr=TrParams(max_iters=60)).quick()

for k in [(0, 0), (32, 0), (32, 32)]:
    m = measure_efficiencies(k, sc, trials=4, seed=0)
    print(f"K_TR={k[0]:3d} K_IM={k[1]:3d}  eta_PA {m.eta_pa:.3f}  eta_R {m.eta_r:.4f}  Xi {m.xi:.2f}")

# finite differences around (32, 32), common random numbers at every point
surrogate = calibrate_surrogate((32, 32), step=8, scenario=sc, trials=4, seed=1)
print("\nfitted:", {n: round(float(getattr(surrogate, n)), 6) for n in ("c1", "c2", "c3", "c4")})

budget = LinkBudget(p_min=0.0)
problem = build_sca(budget, surrogate, sc.mimo)
res = allocate(problem, surrogate.k0)
print(f"SCA: {res.iterations} iterations, converged={res.converged}, k={res.k_integer}")

# scalarised rate-energy trade-off over the power-splitting ratio
for p in re_region(budget, surrogate, sc.mimo, np.linspace(0.1, 0.9, 5), resolution=9):
    print(f"rho {p.rho:.1f}  k {p.k}  R {p.rate:9.1f}  E {p.energy:.3e}")
