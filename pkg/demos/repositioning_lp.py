"""What does the repositioning LP do with a displaced car?

Builds a two-zone toy network, sets a fluid target of one idle car and one
occupied car per zone, then knocks the state off target in two ways and
shows the moves the LP prescribes.
"""
import numpy as np

from fleetflux import FluidPoint, NetworkConfig, SystemState
from fleetflux.lp import build_ap

N = 4
cfg = NetworkConfig.from_matrices([[0.3, 0.0], [0.0, 0.2]], [[0.5, 1.0], [1.0, 0.5]], fleet_size=N,
                                  inv_nu=[0.25], delta=[1.0], alpha=2.0, beta=1.0)
P, R = len(cfg.trip_pairs), len(cfg.reposition_pairs)
target = FluidPoint(a=np.array([1, 1]) / N, d=np.zeros((P, 1)), e=np.zeros(R), f=np.array([1, 1]) / N,
                    x=np.ones((P, 1)), p=np.full((P, 1), 0.5), q=np.full((2, 1), 0.8))


def show(label, a, f):
    s = SystemState.empty(cfg)
    s.a[:], s.f[:] = a, f
    sol = build_ap(cfg, s, target).solve()
    moves = {cfg.reposition_pairs[r]: int(n) for r, n in enumerate(sol.y) if n}
    print(f"{label:<34} cost {sol.objective:6.3f}  move now {moves or 'nothing'}")


show("on target", [1, 1], [1, 1])
# an extra idle car in zone 0: cheapest to send it across right away
show("two idle in zone 0, none in zone 1", [2, 0], [1, 1])
# the surplus sits in an occupied car: nothing to move yet, the LP waits
show("extra rider heading to zone 0", [0, 0], [3, 1])
