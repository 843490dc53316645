"""Continuous-time event simulation of the fleet.

Requests on each trip pair arrive as Poisson processes of rate ``N * lam``.
A request draws an en-route class from the nearest-car law (or finds no car
in range and is lost), then accepts the posted price with the logit
probability.  Accepted requests dispatch a car, which later picks the rider
up, drops them off at the destination and becomes idle there.  Cars sent to
reposition become idle at the end of their repositioning trip.

Only state-changing transitions count as events; lost and rejected requests
advance the clock but are tallied separately.  This is the same process as
the aggregated dispatch rates ``N lam Q P``, with the losses made visible.

Variants:

``base``
    the policy may move any idle cars after every event.
``on-arrival``
    only the car that just became idle may be sent elsewhere.
``extension``
    like ``base`` for the action set, but cars repositioning into zone ``j``
    also serve requests at ``j`` (weighted by ``zeta``); a car taken this way
    abandons its repositioning trip.
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .model import ConfigError, NetworkConfig, SystemState, logit, pickup_class_probabilities

VARIANTS = ("base", "on-arrival", "extension")


class EventKind(enum.IntEnum):
    DISPATCH = 0
    PICKUP = 1
    DROPOFF = 2
    REPOSITION_ARRIVAL = 3

    @property
    def label(self) -> str:
        return ("Dispatch", "Pickup", "Dropoff", "RepositionArrival")[self.value]


@dataclass(frozen=True)
class Event:
    """One transition.  ``k`` is the 0-based en-route class (-1 if none);
    ``source`` is the repositioning pair a dispatched car was taken from in
    the extension variant (-1 for an idle car)."""

    kind: EventKind
    i: int
    j: int
    k: int = -1
    source: int = -1


@dataclass(frozen=True)
class EventContext:
    """What a policy sees after an event (``event`` is None at time zero)."""

    event: Event | None
    index: int
    time: float
    variant: str


@dataclass(frozen=True)
class SimConfig:
    variant: str = "base"
    events: int = 20000
    warmup: int = 10000
    seed: int = 0
    # full state snapshots every this many events
    snapshot_every: int = 100
    check_conservation: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.events < 1:
            raise ConfigError("events must be positive")
        if not 0 <= self.warmup < self.events:
            raise ConfigError("warmup must be smaller than the number of events")


@dataclass
class RateTable:
    """Transition rates out of one state."""

    dispatch: np.ndarray   # (P, K0)
    pickup: np.ndarray     # (P, K0)
    dropoff: np.ndarray    # (P,)
    reposition: np.ndarray  # (R,)

    @property
    def total(self) -> float:
        return float(self.dispatch.sum() + self.pickup.sum() + self.dropoff.sum() + self.reposition.sum())


def availability(cfg: NetworkConfig, state: SystemState, extension: bool = False) -> np.ndarray:
    """Cars that can serve a request at each zone."""
    avail = np.asarray(state.a, dtype=float).copy()
    if extension and len(cfg.reposition_pairs):
        np.add.at(avail, cfg.rep_dest, cfg.zeta * np.asarray(state.e, dtype=float))
    return avail


def acceptance_table(cfg: NetworkConfig, prices) -> np.ndarray:
    """Logit take-up ``P_pk`` of the posted prices, zero for absent classes."""
    x = np.broadcast_to(np.asarray(prices, dtype=float), cfg.alpha.shape)
    return np.where(cfg.class_mask(), logit(cfg.alpha, cfg.beta[:, None], x), 0.0)


def event_rates(cfg: NetworkConfig, state: SystemState, prices, extension: bool = False) -> RateTable:
    """Rates of the four transition types given the posted prices."""
    N = cfg.fleet_size
    acc = acceptance_table(cfg, prices)
    avail = availability(cfg, state, extension)
    Q = np.zeros_like(acc)
    for p, (i, _) in enumerate(cfg.trip_pairs):
        K = int(cfg.n_classes[i])
        Q[p, :K] = pickup_class_probabilities(cfg, i, avail[i])
    d = np.asarray(state.d, dtype=float)
    return RateTable(
        dispatch=N * cfg.lam[:, None] * Q * acc,
        pickup=cfg.nu[None, :] * d * cfg.class_mask(),
        dropoff=cfg.mu * np.asarray(state.f, dtype=float),
        reposition=cfg.mu_tilde * np.asarray(state.e, dtype=float),
    )


def apply_event(cfg: NetworkConfig, state: SystemState, event: Event) -> SystemState:
    """Move one car according to ``event`` (in place; also returned)."""
    kind = event.kind
    if kind is EventKind.DISPATCH:
        p = cfg.trip_index(event.i, event.j)
        if event.source >= 0:
            assert state.e[event.source] > 0, "no repositioning car to take"
            assert cfg.reposition_pairs[event.source][1] == event.i
            state.e[event.source] -= 1
        else:
            assert state.a[event.i] > 0, "no idle car to dispatch"
            state.a[event.i] -= 1
        state.d[p, event.k] += 1
    elif kind is EventKind.PICKUP:
        p = cfg.trip_index(event.i, event.j)
        assert state.d[p, event.k] > 0
        state.d[p, event.k] -= 1
        state.f[p] += 1
    elif kind is EventKind.DROPOFF:
        p = cfg.trip_index(event.i, event.j)
        assert state.f[p] > 0
        state.f[p] -= 1
        state.a[event.j] += 1
    elif kind is EventKind.REPOSITION_ARRIVAL:
        r = cfg.reposition_index(event.i, event.j)
        assert state.e[r] > 0
        state.e[r] -= 1
        state.a[event.j] += 1
    else:  # pragma: no cover
        raise ValueError(f"unknown event kind {kind}")
    return state


def apply_repositioning(cfg: NetworkConfig, state: SystemState, y) -> int:
    """Send ``y[r]`` idle cars along repositioning pair ``r``; returns the count."""
    y = np.asarray(y, dtype=np.int64)
    if not y.any():
        return 0
    assert np.all(y >= 0), "negative repositioning"
    out = np.bincount(cfg.rep_origin, weights=y, minlength=cfg.n_zones).astype(np.int64)
    assert np.all(out <= state.a), "repositioning more cars than are idle"
    state.a -= out
    state.e += y
    return int(y.sum())


@dataclass
class SimulationRecord:
    """Per-event trace and counters of one run."""

    cfg: NetworkConfig
    sim: SimConfig
    policy_name: str
    times: np.ndarray
    kinds: np.ndarray
    origin: np.ndarray
    dest: np.ndarray
    klass: np.ndarray
    revenue: np.ndarray
    idle: np.ndarray          # (L, Z) idle counts after each event
    exiting: np.ndarray       # (L, Z) cars carrying a rider out of each zone
    snapshots: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    status: str = "completed"
    target_idle: np.ndarray | None = None

    @property
    def n_events(self) -> int:
        return len(self.times)

    def _post(self):
        w = min(self.sim.warmup, self.n_events)
        return slice(w, self.n_events)

    @property
    def start_time(self) -> float:
        w = self.sim.warmup
        return float(self.times[w - 1]) if 0 < w <= self.n_events else 0.0

    @property
    def elapsed(self) -> float:
        return float(self.times[-1]) - self.start_time if self.n_events else 0.0

    def revenue_rate(self) -> float:
        """Post-warmup revenue per unit time per car."""
        if self.elapsed <= 0:
            return 0.0
        return self.total_revenue_rate() / self.cfg.fleet_size

    def total_revenue_rate(self) -> float:
        """Post-warmup revenue per unit time for the whole fleet."""
        if self.elapsed <= 0:
            return 0.0
        return float(self.revenue[self._post()].sum()) / self.elapsed

    def idle_average(self) -> np.ndarray:
        """Time-weighted post-warmup mean of idle cars per zone."""
        s = self._post()
        if self.elapsed <= 0:
            return self.idle[s].mean(axis=0) if self.n_events else np.zeros(self.cfg.n_zones)
        t = self.times[s]
        # idle[l] holds from times[l] until times[l + 1]
        stay = np.diff(np.concatenate((t, [t[-1]])))
        return (self.idle[s] * stay[:, None]).sum(axis=0) / max(float(stay.sum()), 1e-300)

    def idle_mse(self, target=None) -> np.ndarray:
        """Mean over post-warmup events of the squared gap to the target."""
        target = self.target_idle if target is None else np.asarray(target, dtype=float)
        if target is None:
            raise ValueError("no target idle allocation to compare against")
        gap = self.idle[self._post()] - target[None, :]
        return (gap**2).mean(axis=0)

    def idle_deviation(self, target=None) -> np.ndarray:
        """Root of :meth:`idle_mse`."""
        return np.sqrt(self.idle_mse(target))

    def summary(self) -> dict[str, Any]:
        out = {
            "policy": self.policy_name,
            "variant": self.sim.variant,
            "seed": self.sim.seed,
            "events": self.n_events,
            "warmup": self.sim.warmup,
            "status": self.status,
            "fleet_size": self.cfg.fleet_size,
            "elapsed_time": self.elapsed,
            "revenue_rate": self.revenue_rate(),
            "total_revenue_rate": self.total_revenue_rate(),
            "idle_average": self.idle_average().tolist(),
            "counts": dict(self.counts),
        }
        if self.target_idle is not None:
            out["target_idle"] = np.asarray(self.target_idle).tolist()
            out["idle_deviation"] = self.idle_deviation().tolist()
            out["idle_mse"] = self.idle_mse().tolist()
        return out

    def write(self, out_dir) -> list[Path]:
        """``events.csv``, ``idle_series.csv`` and ``summary.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "events.csv", out / "idle_series.csv", out / "summary.json"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["l", "T", "kind", "i", "j", "k", "revenue_increment"])
            for l in range(self.n_events):
                k = int(self.klass[l])
                w.writerow([l + 1, repr(float(self.times[l])), EventKind(int(self.kinds[l])).label,
                            int(self.origin[l]), int(self.dest[l]), k + 1 if k >= 0 else "",
                            repr(float(self.revenue[l]))])
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", *self.cfg.zones])
            for l in range(self.n_events):
                w.writerow([repr(float(self.times[l])), *map(int, self.idle[l])])
        paths[2].write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return paths


def run(sim: SimConfig, cfg: NetworkConfig, policy, state: SystemState | None = None) -> SimulationRecord:
    """Simulate ``sim.events`` events under ``policy``.

    The policy supplies constant ``prices`` (P, K0), an ``action_set`` in
    ``{"none", "on-arrival", "any-idle"}``, optionally ``target_idle`` (cars
    per zone) and ``controller()``, which returns a per-run callable
    ``(cfg, state, ctx, rng) -> Action`` invoked at time zero and after
    every event.
    """
    action_set = getattr(policy, "action_set", "none")
    if sim.variant == "on-arrival" and action_set == "any-idle":
        raise ConfigError("the on-arrival variant only allows moving the arriving car; "
                          f"policy {policy.name!r} repositions arbitrary idle cars")
    extension = sim.variant == "extension"
    rng = np.random.default_rng(sim.seed)
    N = cfg.fleet_size
    Z, P, R = cfg.n_zones, len(cfg.trip_pairs), len(cfg.reposition_pairs)
    K0 = cfg.max_classes
    target_idle = getattr(policy, "target_idle", None)
    if state is None:
        state = SystemState.all_idle(cfg, None if target_idle is None else target_idle)
    else:
        state = state.copy()
    state.check(N)

    acc = acceptance_table(cfg, policy.prices)
    gain = np.broadcast_to(np.asarray(policy.prices, dtype=float), (P, K0)) - cfg.phi
    lam_rate = N * cfg.lam
    arrival_total = float(lam_rate.sum())
    arrival_cum = np.cumsum(lam_rate)
    pair_origin = cfg.trip_origin
    pair_dest = cfg.trip_dest
    rep_o, rep_d = cfg.rep_origin, cfg.rep_dest
    mask = cfg.class_mask()
    nu_k = np.where(mask, cfg.nu[None, :], 0.0)
    # exponent coefficients of the nearest-car law per zone and class edge
    radii2 = np.concatenate(([0.0], cfg.sim_radii**2))
    coef = [cfg.omega * radii2[: int(cfg.n_classes[i]) + 1] / cfg.sigma[i] for i in range(Z)]
    inbound = [np.flatnonzero(rep_d == i) for i in range(Z)]
    rep_index = {pair: r for r, pair in enumerate(cfg.reposition_pairs)}
    psi = cfg.psi

    L = sim.events
    times = np.zeros(L)
    kinds = np.zeros(L, dtype=np.int8)
    origin = np.zeros(L, dtype=np.int16)
    dest = np.zeros(L, dtype=np.int16)
    klass = np.full(L, -1, dtype=np.int8)
    revenue = np.zeros(L)
    idle = np.zeros((L, Z), dtype=np.int32)
    exiting = np.zeros((L, Z), dtype=np.int32)
    snapshots = []
    counts = {"dispatch": 0, "pickup": 0, "dropoff": 0, "reposition_arrival": 0,
              "requests": 0, "lost_no_car": 0, "rejected": 0, "repositioned": 0,
              "taken_while_repositioning": 0, "ap_failures": 0}
    reposition_cost = 0.0
    offtrip = pair_origin != pair_dest

    controller = policy.controller()

    def act(ctx):
        nonlocal reposition_cost
        action = controller(cfg, state, ctx, rng)
        if action.failed:
            counts["ap_failures"] += 1
        if action.y is None:
            return
        y = np.asarray(action.y, dtype=np.int64)
        if not y.any():
            return
        if sim.variant == "on-arrival":
            ev = ctx.event
            ok = (ev is not None and ev.kind in (EventKind.DROPOFF, EventKind.REPOSITION_ARRIVAL)
                  and y.sum() == 1 and rep_o[int(np.argmax(y))] == ev.j)
            assert ok, "on-arrival variant: only the arriving car may be repositioned"
        counts["repositioned"] += apply_repositioning(cfg, state, y)
        reposition_cost += float(psi @ y)

    act(EventContext(None, 0, 0.0, sim.variant))
    t = 0.0
    status = "completed"
    l = 0
    while l < L:
        pick = nu_k * state.d
        drop = cfg.mu * state.f
        rep = cfg.mu_tilde * state.e
        s_pick, s_drop, s_rep = float(pick.sum()), float(drop.sum()), float(rep.sum())
        total = arrival_total + s_pick + s_drop + s_rep
        if total <= 0 or (s_pick + s_drop + s_rep <= 0
                          and event_rates(cfg, state, policy.prices, extension).total <= 0):
            # no transition can ever fire: every request would be lost or refused
            status = "absorbed"
            break
        t += rng.exponential(1.0 / total)
        u = rng.random() * total
        event = None
        if u < arrival_total:
            p = min(int(np.searchsorted(arrival_cum, u, side="right")), P - 1)
            i = int(pair_origin[p])
            counts["requests"] += 1
            avail = float(state.a[i])
            if extension and len(inbound[i]):
                avail += float(cfg.zeta[inbound[i]] @ state.e[inbound[i]])
            surv = np.exp(-coef[i] * avail)
            v = rng.random()
            # classes are the bands surv[k + 1] <= v < surv[k]; v < surv[-1] is lost
            k = -1
            for kk in range(len(surv) - 1):
                if v >= surv[kk + 1]:
                    k = kk
                    break
            if k < 0:
                counts["lost_no_car"] += 1
                continue
            if rng.random() >= acc[p, k]:
                counts["rejected"] += 1
                continue
            source = -1
            if extension and len(inbound[i]):
                w_rep = cfg.zeta[inbound[i]] * state.e[inbound[i]]
                # no extra draw unless a repositioning car could be taken, so
                # zeta = 0 reproduces the base variant draw for draw
                v2 = rng.random() * (state.a[i] + w_rep.sum()) if w_rep.any() else 0.0
                if v2 >= state.a[i] and w_rep.any():
                    c = np.cumsum(w_rep)
                    idx = min(int(np.searchsorted(c, v2 - state.a[i], side="right")), len(c) - 1)
                    source = int(inbound[i][idx])
                    counts["taken_while_repositioning"] += 1
            event = Event(EventKind.DISPATCH, i, int(pair_dest[p]), k, source)
            if source >= 0:
                state.e[source] -= 1
            else:
                state.a[i] -= 1
            state.d[p, k] += 1
            revenue[l] = gain[p, k]
            counts["dispatch"] += 1
        else:
            u -= arrival_total
            if u < s_pick:
                flat = np.cumsum(pick.ravel())
                idx = min(int(np.searchsorted(flat, u, side="right")), flat.size - 1)
                while pick.flat[idx] <= 0:  # round-off at the table edge
                    idx -= 1
                p, k = divmod(idx, K0)
                state.d[p, k] -= 1
                state.f[p] += 1
                event = Event(EventKind.PICKUP, int(pair_origin[p]), int(pair_dest[p]), k)
                counts["pickup"] += 1
            elif u < s_pick + s_drop:
                c = np.cumsum(drop)
                p = min(int(np.searchsorted(c, u - s_pick, side="right")), P - 1)
                while drop[p] <= 0:
                    p -= 1
                state.f[p] -= 1
                j = int(pair_dest[p])
                state.a[j] += 1
                event = Event(EventKind.DROPOFF, int(pair_origin[p]), j)
                counts["dropoff"] += 1
            else:
                c = np.cumsum(rep)
                r = min(int(np.searchsorted(c, u - s_pick - s_drop, side="right")), R - 1)
                while rep[r] <= 0:
                    r -= 1
                state.e[r] -= 1
                j = int(rep_d[r])
                state.a[j] += 1
                event = Event(EventKind.REPOSITION_ARRIVAL, int(rep_o[r]), j)
                counts["reposition_arrival"] += 1

        times[l] = t
        kinds[l] = int(event.kind)
        origin[l] = event.i
        dest[l] = event.j
        klass[l] = event.k
        act(EventContext(event, l + 1, t, sim.variant))
        idle[l] = state.a
        np.add.at(exiting[l], pair_origin[offtrip], state.f[offtrip])
        if sim.snapshot_every and (l + 1) % sim.snapshot_every == 0:
            snapshots.append((l + 1, state.copy()))
        if sim.check_conservation:
            state.check(N)
        l += 1

    counts["reposition_cost"] = reposition_cost
    rec = SimulationRecord(
        cfg=cfg, sim=sim, policy_name=getattr(policy, "name", type(policy).__name__),
        times=times[:l], kinds=kinds[:l], origin=origin[:l], dest=dest[:l], klass=klass[:l],
        revenue=revenue[:l], idle=idle[:l], exiting=exiting[:l], snapshots=snapshots,
        counts=counts, status=status,
        target_idle=None if target_idle is None else np.asarray(target_idle, dtype=float),
    )
    return rec
