"""Pricing and repositioning controllers driven by a fluid solution.

All three policies post the fluid-optimal prices as constant prices.  They
differ only in repositioning:

* :class:`NoRepositioning` never moves empty cars;
* :class:`StaticPolicy` sends a car that just became idle at zone ``i`` to
  ``j`` with a fixed probability ``ytilde[i, j]`` (stay with ``ytilde[i, i]``);
* :class:`StateDependentPolicy` solves the repositioning LP against the fluid
  target and moves the floored optimum.

A policy is immutable.  :meth:`controller` returns the per-run callable the
simulator uses, so one policy can drive many runs at once.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from .lp import APModel
from .model import ConfigError, NetworkConfig

log = logging.getLogger(__name__)

# events after which a car has just become idle
_ARRIVALS = ("DROPOFF", "REPOSITION_ARRIVAL")


class Action(NamedTuple):
    """Prices for the next exposure and cars to send per repositioning pair."""

    prices: np.ndarray
    y: np.ndarray | None = None
    failed: bool = False


def fluid_prices(sol) -> np.ndarray:
    """``(P, K0)`` price table of a fluid solution.  A single price per pair
    (no en-route classes) is posted to every class."""
    cfg = sol.cfg
    x = np.asarray(sol.point.x, dtype=float).reshape(len(cfg.trip_pairs), -1)
    x = np.broadcast_to(x, (len(cfg.trip_pairs), cfg.max_classes)).copy()
    x[~cfg.class_mask()] = 0.0
    return np.nan_to_num(x)


def _arrived_zone(ctx) -> int | None:
    ev = ctx.event
    if ev is None or ev.kind.name not in _ARRIVALS:
        return None
    return ev.j


@dataclass(frozen=True, eq=False)
class Policy:
    name: str
    cfg: NetworkConfig
    prices: np.ndarray
    target_idle: np.ndarray | None = None
    # which cars the policy may move: "none", "on-arrival" or "any-idle"
    action_set = "none"
    default_variant = "base"

    def controller(self):
        prices = self.prices

        def act(cfg, state, ctx, rng):
            return Action(prices)
        return act

    def to_dict(self) -> dict[str, Any]:
        out = {
            "name": self.name,
            "type": type(self).__name__,
            "zones": list(self.cfg.zones),
            "trip_pairs": [list(p) for p in self.cfg.trip_pairs],
            "reposition_pairs": [list(p) for p in self.cfg.reposition_pairs],
            "prices": np.asarray(self.prices).tolist(),
        }
        if self.target_idle is not None:
            out["target_idle"] = np.asarray(self.target_idle).tolist()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


@dataclass(frozen=True, eq=False)
class NoRepositioning(Policy):
    pass


@dataclass(frozen=True, eq=False)
class StaticPolicy(Policy):
    ytilde: np.ndarray = field(default=None)  # (Z, Z), rows sum to one
    action_set = "on-arrival"
    default_variant = "on-arrival"

    def __post_init__(self):
        y = np.asarray(self.ytilde, dtype=float)
        Z = self.cfg.n_zones
        if y.shape != (Z, Z):
            raise ConfigError(f"ytilde must be {Z}x{Z}")
        if np.any(y < 0) or np.any(y > 1) or not np.allclose(y.sum(axis=1), 1.0, atol=1e-9):
            raise ConfigError("ytilde rows must be probabilities summing to one")
        rep = set(self.cfg.reposition_pairs)
        off = [(i, j) for i, j in zip(*np.nonzero(y)) if i != j and (int(i), int(j)) not in rep]
        if off:
            raise ConfigError(f"ytilde puts mass on non-repositioning pairs {off}")

    def controller(self):
        cfg, prices = self.cfg, self.prices
        # per zone: candidate pairs and cumulative move probabilities
        table = []
        for i in range(cfg.n_zones):
            arcs = [(r, self.ytilde[i, j]) for r, (o, j) in enumerate(cfg.reposition_pairs)
                    if o == i and self.ytilde[i, j] > 0]
            table.append((np.array([r for r, _ in arcs], dtype=np.int64),
                          np.cumsum([w for _, w in arcs])))
        R = len(cfg.reposition_pairs)

        def act(cfg_, state, ctx, rng):
            i = _arrived_zone(ctx)
            if i is None or not len(table[i][0]):
                return Action(prices)
            arcs, cum = table[i]
            u = rng.random()
            hit = int(np.searchsorted(cum, u, side="right"))
            if hit >= len(arcs):  # stay
                return Action(prices)
            y = np.zeros(R, dtype=np.int64)
            y[arcs[hit]] = 1
            return Action(prices, y)
        return act

    def to_dict(self):
        out = super().to_dict()
        out["ytilde"] = np.asarray(self.ytilde).tolist()
        return out


@dataclass(frozen=True, eq=False)
class StateDependentPolicy(Policy):
    ap: APModel = field(default=None, repr=False)
    # solve at every m-th event that frees a car
    cadence: int = 1
    action_set = "any-idle"

    def __post_init__(self):
        if self.cadence < 1:
            raise ConfigError("cadence must be a positive integer")

    def controller(self):
        # a private solver per run: the AP is degenerate, so a basis inherited
        # from another run would change tie-breaking and make runs order-dependent
        prices, ap, m = self.prices, self.ap.fresh(), self.cadence
        seen = [0]

        def act(cfg, state, ctx, rng):
            if ctx.event is not None:
                if _arrived_zone(ctx) is None:
                    return Action(prices)
                seen[0] += 1
                if seen[0] % m:
                    return Action(prices)
            sol = ap.solve(state)
            return Action(prices, sol.y, failed=not sol.ok)
        return act

    def to_dict(self):
        out = super().to_dict()
        ap = self.ap
        out.update(C=ap.C, tau=ap.tau, cadence=self.cadence, target={
            "a": ap.target_a.tolist(), "d": ap.target_d.tolist(),
            "e": ap.target_e.tolist(), "f": ap.target_f.tolist()})
        return out


def static_probabilities(sol, tol: float = 1e-9) -> np.ndarray:
    """Stay/move probabilities from the fluid repositioning and delivery flows.

    A car arriving at ``i`` moves to ``j`` with probability equal to the share
    of the repositioning flow ``i -> j`` in the total flow into ``i``.
    """
    cfg = sol.cfg
    Z = cfg.n_zones
    pt = sol.point
    e = np.maximum(np.asarray(pt.e, dtype=float), 0.0) if len(cfg.reposition_pairs) else np.zeros(0)
    f = np.maximum(np.asarray(pt.f, dtype=float), 0.0)
    rep_flow = cfg.mu_tilde * e if e.size else np.zeros(0)
    inflow = np.bincount(cfg.trip_dest, weights=cfg.mu * f, minlength=Z)
    if rep_flow.size:
        inflow += np.bincount(cfg.rep_dest, weights=rep_flow, minlength=Z)
    y = np.zeros((Z, Z))
    for r, (i, j) in enumerate(cfg.reposition_pairs):
        if inflow[i] > 0:
            y[i, j] = rep_flow[r] / inflow[i]
    # round-off cleanup, then re-validate
    y[(y < 0) & (y > -tol)] = 0.0
    move = y.sum(axis=1)
    over = (move > 1) & (move <= 1 + tol)
    y[over] /= move[over, None]
    move = y.sum(axis=1)
    if np.any(y < 0) or np.any(move > 1 + tol):
        raise ConfigError("fluid flows give repositioning probabilities outside [0, 1]")
    y[np.arange(Z), np.arange(Z)] = np.clip(1.0 - move, 0.0, 1.0)
    return y


def build_no_repositioning(sol, name: str = "no-repositioning") -> NoRepositioning:
    return NoRepositioning(name, sol.cfg, fluid_prices(sol), sol.idle_cars)


def build_static(sol, name: str = "static") -> StaticPolicy:
    return StaticPolicy(name, sol.cfg, fluid_prices(sol), sol.idle_cars, static_probabilities(sol))


def default_cadence(cfg: NetworkConfig) -> int:
    """Solve the AP at every ``N / 5``-th car-freeing event (40 for 200 cars).

    Solving at every such event over-corrects random fluctuations and sends
    cars back and forth; a fleet-proportional cadence lets them average out.
    """
    return max(1, round(cfg.fleet_size / 5))


def build_state_dependent(sol, C: float = 1.0, tau: float | None = None, cadence: int | None = None,
                          name: str = "state-dependent") -> StateDependentPolicy:
    cadence = default_cadence(sol.cfg) if cadence is None else int(cadence)
    ap = APModel(sol.cfg, sol, C=C, tau=tau)
    return StateDependentPolicy(name, sol.cfg, fluid_prices(sol), ap.target_a, ap, cadence)


BUILDERS = {
    "no-repositioning": build_no_repositioning,
    "static": build_static,
    "state-dependent": build_state_dependent,
}


def build_policy(kind: str, sol, **kw) -> Policy:
    try:
        builder = BUILDERS[kind]
    except KeyError:
        raise ConfigError(f"unknown policy {kind!r}; choose from {sorted(BUILDERS)}") from None
    return builder(sol, **kw)
