"""How much revenue could each city earn, and where should the cars wait?

Solves the fluid problems for the three five-zone cities and prints the
revenue bound of each, plus the idle-car allocation for a 200-car fleet.
Takes a few seconds.
"""
import numpy as np

from fleetflux import DEFAULT_ZETA, ZONES, load_instance, solve_fluid
from fleetflux.experiments import load_k0_lock

K0 = load_k0_lock()
KINDS = ["FP1-no-repositioning", "FP1", "FP2", "FP3"]

print(f"en-route classes per trip: {K0}\n")
print(f"{'city':<10}" + "".join(f"{k:>22}" for k in KINDS))
allocations = {}
for city in ("instance1", "instance2", "instance3"):
    row = []
    for kind in KINDS:
        # only the extension problem lets repositioning cars pick up riders
        cfg = load_instance(city, K0=K0, zeta=DEFAULT_ZETA if kind == "FP3" else 0.0)
        sol = solve_fluid(cfg, kind)
        row.append(sol.objective)
        if kind == "FP1":
            allocations[city] = sol.idle_cars
    print(f"{city:<10}" + "".join(f"{v:>22.3f}" for v in row))

# Repositioning roughly triples the bound: without it, prices alone must
# balance the flow in and out of every zone.  FP2 ignores pickup times, so
# its bound sits well above what a real fleet achieves.
print("\nidle cars per zone at the FP1 optimum (200 cars):")
print(f"{'city':<10}" + "".join(f"{z:>8}" for z in ZONES))
for city, a in allocations.items():
    print(f"{city:<10}" + "".join(f"{v:>8.2f}" for v in a))
print("\nidle share of the fleet: " + ", ".join(
    f"{c} {np.sum(a) / 200:.0%}" for c, a in allocations.items()))
