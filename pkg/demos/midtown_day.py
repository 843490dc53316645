"""Follow the midtown idle count under three repositioning rules.

Simulates instance 3 with 200 cars under no repositioning, the static
on-arrival rule and the state-dependent LP rule, all posting the same
fluid-optimal prices.  Prints revenue, how far each zone drifts from its
fluid target, and a sparse trace of midtown idle cars.
Takes about half a minute.
"""
import numpy as np

from fleetflux import SimConfig, ZONES, build_policy, load_instance, run, solve_fluid

cfg = load_instance("instance3")
sols = {"FP1": solve_fluid(cfg, "FP1"), "FP1-no-repositioning": solve_fluid(cfg, "FP1-no-repositioning")}
runs = [
    ("no repositioning", build_policy("no-repositioning", sols["FP1-no-repositioning"])),
    ("static", build_policy("static", sols["FP1"])),
    ("state-dependent", build_policy("state-dependent", sols["FP1"])),
]
target = sols["FP1"].idle_cars
mt = ZONES.index("MT")
print(f"fluid bound {sols['FP1'].objective:.3f} per car, midtown target {target[mt]:.1f} idle cars\n")

for label, policy in runs:
    rec = run(SimConfig(variant=policy.default_variant, events=20000, warmup=10000, seed=0), cfg, policy)
    dev = rec.idle_deviation()
    print(f"{label:<17} revenue {rec.revenue_rate():6.3f}   deviation by zone "
          + " ".join(f"{z} {d:5.2f}" for z, d in zip(ZONES, dev)))
    print(f"{'':<17} average idle   " + " ".join(f"{z} {v:5.1f}" for z, v in zip(ZONES, rec.idle_average())))
    # midtown idle cars every 1000 events after warm-up
    print(f"{'':<17} midtown trace  " + " ".join(str(int(v)) for v in rec.idle[10000::1000, mt]))

print("\nWithout repositioning the prices must keep each zone's flows balanced on their own,")
print("so most of the fleet sits idle.  Both repositioning rules keep about three quarters")
print("of the fleet busy; the LP rule holds midtown closer to its target than the static rule.")
