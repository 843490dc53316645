"""Network primitives, system state and the closed-form probability models.

Zone pairs are stored sparsely: ``trip_pairs`` holds the origin/destination
pairs with positive demand and ``reposition_pairs`` holds the pairs empty cars
may travel between.  Every per-pair parameter is an array aligned with one of
those tuples.  En-route classes are numbered ``1..K`` in the public functions
and ``0..K-1`` in the arrays.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import expit


class ConfigError(ValueError):
    """A network configuration violates one of the model assumptions."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class NetworkConfig:
    """All primitives of a ride-hailing network with ``fleet_size`` cars.

    Rates are per car: requests on pair ``p`` arrive at total rate
    ``fleet_size * lam[p]``.  ``delta`` holds the normalized pickup radii used
    by the fluid problems; ``sim_radii`` holds the radii used with integer idle
    counts, chosen so that ``sim_radii**2 * count == delta**2 * count / N``.
    """

    zones: tuple[str, ...]
    sigma: np.ndarray
    fleet_size: int
    trip_pairs: tuple[tuple[int, int], ...]
    reposition_pairs: tuple[tuple[int, int], ...]
    lam: np.ndarray
    mu: np.ndarray
    mu_tilde: np.ndarray
    nu: np.ndarray
    delta: np.ndarray
    omega: float
    n_classes: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    zeta: np.ndarray
    alpha0: np.ndarray | None = None
    phi0: np.ndarray | None = None
    sim_radii: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        set_ = lambda name, value: object.__setattr__(self, name, value)  # noqa: E731
        set_("zones", tuple(str(z) for z in self.zones))
        set_("trip_pairs", tuple((int(i), int(j)) for i, j in self.trip_pairs))
        set_("reposition_pairs", tuple((int(i), int(j)) for i, j in self.reposition_pairs))
        for name in ("sigma", "lam", "mu", "mu_tilde", "nu", "delta", "alpha",
                     "beta", "phi", "psi", "zeta"):
            set_(name, _frozen(getattr(self, name)))
        set_("n_classes", _frozen(self.n_classes, dtype=np.int64))
        for name in ("alpha0", "phi0"):
            if getattr(self, name) is not None:
                set_(name, _frozen(getattr(self, name)))
        set_("omega", float(self.omega))
        set_("fleet_size", int(self.fleet_size))
        self._validate()
        set_("sim_radii", _frozen(self.delta / np.sqrt(self.fleet_size)))

    # -- structure -------------------------------------------------------
    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def max_classes(self) -> int:
        return len(self.nu)

    @property
    def trip_origin(self) -> np.ndarray:
        return np.array([i for i, _ in self.trip_pairs], dtype=np.int64)

    @property
    def trip_dest(self) -> np.ndarray:
        return np.array([j for _, j in self.trip_pairs], dtype=np.int64)

    @property
    def rep_origin(self) -> np.ndarray:
        return np.array([i for i, _ in self.reposition_pairs], dtype=np.int64)

    @property
    def rep_dest(self) -> np.ndarray:
        return np.array([j for _, j in self.reposition_pairs], dtype=np.int64)

    def class_mask(self) -> np.ndarray:
        """Boolean ``(n_trip_pairs, K0)`` mask of the classes valid for each pair."""
        k = np.arange(self.max_classes)
        return k[None, :] < self.n_classes[self.trip_origin][:, None]

    def trip_index(self, i: int, j: int) -> int:
        try:
            return self.trip_pairs.index((i, j))
        except ValueError:
            raise KeyError(f"({i}, {j}) is not a trip pair") from None

    def reposition_index(self, i: int, j: int) -> int:
        try:
            return self.reposition_pairs.index((i, j))
        except ValueError:
            raise KeyError(f"({i}, {j}) is not a reposition pair") from None

    def with_fleet_size(self, n: int) -> "NetworkConfig":
        return replace(self, fleet_size=n)

    # -- validation ------------------------------------------------------
    def _validate(self):
        Z, P, R, K0 = self.n_zones, len(self.trip_pairs), len(self.reposition_pairs), len(self.nu)
        if Z == 0:
            raise ConfigError("at least one zone is required")
        if self.fleet_size <= 0:
            raise ConfigError("fleet size must be a positive integer")
        if P == 0:
            raise ConfigError("the set of trip pairs must be nonempty")
        if len(set(self.trip_pairs)) != P or len(set(self.reposition_pairs)) != R:
            raise ConfigError("duplicate zone pairs")
        for i, j in self.trip_pairs + self.reposition_pairs:
            if not (0 <= i < Z and 0 <= j < Z):
                raise ConfigError(f"zone pair ({i}, {j}) out of range")
        if any(i == j for i, j in self.reposition_pairs):
            raise ConfigError("reposition pairs must not contain self-loops")
        shapes = {
            "sigma": (Z,), "lam": (P,), "mu": (P,), "mu_tilde": (R,), "delta": (K0,),
            "n_classes": (Z,), "alpha": (P, K0), "beta": (P,), "phi": (P, K0),
            "psi": (R,), "zeta": (R,),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise ConfigError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in ("alpha0", "phi0"):
            if getattr(self, name) is not None and getattr(self, name).shape != (P,):
                raise ConfigError(f"{name} must have one entry per trip pair")
        if K0 == 0:
            raise ConfigError("at least one en-route class is required")
        if np.any(self.sigma <= 0):
            raise ConfigError("zone areas sigma must be positive")
        if not self.omega > 0:
            raise ConfigError("geometry constant omega must be positive")
        if np.any(self.n_classes < 1) or np.any(self.n_classes > K0):
            raise ConfigError("per-zone class counts must lie in 1..K0")
        if np.any(self.lam <= 0):
            raise ConfigError("demand rates must be positive on every trip pair")
        if np.any(self.mu <= 0) or np.any(self.mu_tilde <= 0):
            raise ConfigError("travel rates mu and mu_tilde must be positive")
        if np.any(self.nu <= 0) or np.any(np.diff(1.0 / self.nu) <= 0):
            raise ConfigError("mean en-route times 1/nu_k must be positive and strictly increasing")
        if self.delta[0] <= 0 or np.any(np.diff(self.delta) <= 0):
            raise ConfigError("pickup radii delta_k must be positive and strictly increasing")
        if np.any(self.beta <= 0):
            raise ConfigError("price sensitivities beta must be positive")
        mask = self.class_mask()
        da = np.diff(self.alpha, axis=1)
        if np.any((da >= 0) & mask[:, 1:]):
            raise ConfigError("utility intercepts alpha must be strictly decreasing in k")
        dp = np.diff(self.phi, axis=1)
        if np.any((dp < 0) & mask[:, 1:]):
            raise ConfigError("delivery costs phi must be nondecreasing in k")
        if np.any(self.zeta < 0) or np.any(self.zeta > 1):
            raise ConfigError("dispatch fractions zeta must lie in [0, 1]")
        if Z > 1:
            if R == 0:
                raise ConfigError("reposition pairs must connect every zone")
            g = csr_matrix((np.ones(R), (self.rep_origin, self.rep_dest)), shape=(Z, Z))
            ncomp, _ = connected_components(g, directed=True, connection="strong")
            if ncomp != 1:
                raise ConfigError("reposition graph must be strongly connected")

    # -- construction ----------------------------------------------------
    @classmethod
    def from_matrices(
        cls,
        lam,
        inv_mu,
        *,
        fleet_size: int,
        inv_nu,
        delta,
        alpha,
        beta,
        omega: float = 4.0,
        sigma=1.0,
        inv_mu_tilde=None,
        phi=0.0,
        psi=0.0,
        zeta=0.0,
        reposition_pairs: Sequence[tuple[int, int]] | None = None,
        n_classes=None,
        alpha0=None,
        phi0=None,
        zones: Sequence[str] | None = None,
    ) -> "NetworkConfig":
        """Build a config from dense zone-by-zone matrices.

        Trip pairs are the entries with ``lam > 0``; reposition pairs default to
        every ordered pair of distinct zones.  ``alpha`` and ``phi`` may be
        ``Z x Z x K`` arrays or scalars; the other per-pair inputs may be
        ``Z x Z`` arrays or scalars.
        """
        lam = np.asarray(lam, dtype=float)
        Z = lam.shape[0]
        if lam.shape != (Z, Z):
            raise ConfigError("lambda must be a square matrix")
        inv_nu = np.atleast_1d(np.asarray(inv_nu, dtype=float))
        K0 = len(inv_nu)
        zz = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (Z, Z))  # noqa: E731
        zzk = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (Z, Z, K0))  # noqa: E731
        inv_mu = zz(inv_mu)
        inv_mu_tilde = inv_mu if inv_mu_tilde is None else zz(inv_mu_tilde)
        trips = [(i, j) for i in range(Z) for j in range(Z) if lam[i, j] > 0]
        if reposition_pairs is None:
            reposition_pairs = [(i, j) for i in range(Z) for j in range(Z) if i != j]
        reps = [tuple(p) for p in reposition_pairs]
        ti = tuple(np.array(trips, dtype=np.int64).reshape(-1, 2).T)
        ri = tuple(np.array(reps, dtype=np.int64).reshape(-1, 2).T)
        pick = lambda m, idx: m[idx] if len(idx[0]) else np.zeros(0)  # noqa: E731
        opt = lambda v: None if v is None else pick(zz(v), ti)  # noqa: E731
        if n_classes is None:
            n_classes = np.full(Z, K0)
        return cls(
            zones=tuple(zones) if zones is not None else tuple(str(z + 1) for z in range(Z)),
            sigma=np.broadcast_to(np.asarray(sigma, dtype=float), (Z,)),
            fleet_size=fleet_size,
            trip_pairs=tuple(trips),
            reposition_pairs=tuple(reps),
            lam=pick(lam, ti),
            mu=1.0 / pick(inv_mu, ti),
            mu_tilde=1.0 / pick(inv_mu_tilde, ri) if reps else np.zeros(0),
            nu=1.0 / inv_nu,
            delta=np.atleast_1d(np.asarray(delta, dtype=float)),
            omega=omega,
            n_classes=np.broadcast_to(np.asarray(n_classes, dtype=np.int64), (Z,)),
            alpha=zzk(alpha)[ti] if trips else np.zeros((0, K0)),
            beta=pick(zz(beta), ti),
            phi=zzk(phi)[ti] if trips else np.zeros((0, K0)),
            psi=pick(zz(psi), ri) if reps else np.zeros(0),
            zeta=pick(zz(zeta), ri) if reps else np.zeros(0),
            alpha0=opt(alpha0),
            phi0=opt(phi0),
        )


# -- state ---------------------------------------------------------------
@dataclass
class SystemState:
    """Integer car counts: idle ``a[zone]``, en-route ``d[pair, class]``,
    repositioning ``e[reposition pair]`` and occupied ``f[pair]``."""

    a: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray

    @classmethod
    def empty(cls, cfg: NetworkConfig) -> "SystemState":
        P, R = len(cfg.trip_pairs), len(cfg.reposition_pairs)
        return cls(
            a=np.zeros(cfg.n_zones, dtype=np.int64),
            d=np.zeros((P, cfg.max_classes), dtype=np.int64),
            e=np.zeros(R, dtype=np.int64),
            f=np.zeros(P, dtype=np.int64),
        )

    @classmethod
    def all_idle(cls, cfg: NetworkConfig, weights=None) -> "SystemState":
        """All cars idle, split across zones proportionally to ``weights``
        (uniform when omitted) with largest-remainder rounding."""
        s = cls.empty(cfg)
        N = cfg.fleet_size
        w = np.ones(cfg.n_zones) if weights is None else np.clip(np.asarray(weights, float), 0, None)
        if w.sum() <= 0:
            w = np.ones(cfg.n_zones)
        share = N * w / w.sum()
        base = np.floor(share).astype(np.int64)
        rest = N - base.sum()
        order = np.argsort(-(share - base), kind="stable")
        base[order[:rest]] += 1
        s.a[:] = base
        return s

    def total(self) -> int:
        return int(self.a.sum() + self.d.sum() + self.e.sum() + self.f.sum())

    def check(self, fleet_size: int):
        if self.total() != fleet_size:
            raise AssertionError(f"car count {self.total()} != fleet size {fleet_size}")
        for name in ("a", "d", "e", "f"):
            if np.any(getattr(self, name) < 0):
                raise AssertionError(f"negative count in {name}")

    def copy(self) -> "SystemState":
        return SystemState(self.a.copy(), self.d.copy(), self.e.copy(), self.f.copy())

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return all(np.array_equal(getattr(self, n.name), getattr(other, n.name)) for n in fields(self))


@dataclass
class FluidPoint:
    """Fractions of the fleet in each compartment, plus the recovered
    prices ``x``, acceptance probabilities ``p`` and class masses ``q``."""

    a: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    x: np.ndarray | None = None
    p: np.ndarray | None = None
    q: np.ndarray | None = None

    def total_mass(self) -> float:
        return float(self.a.sum() + self.d.sum() + self.e.sum() + self.f.sum())


# -- probability models ----------------------------------------------------
def pickup_class_probabilities(cfg: NetworkConfig, zone: int, availability: float) -> np.ndarray:
    """Probabilities of en-route classes ``1..K_i`` at ``zone`` given the
    number of available cars (may be fractional for augmented availability).

    The lost-demand probability is ``1 - result.sum()``.
    """
    K = int(cfg.n_classes[zone])
    r = np.concatenate(([0.0], cfg.sim_radii[:K]))
    surv = np.exp(-cfg.omega * r**2 * availability / cfg.sigma[zone])
    return surv[:-1] - surv[1:]


def pickup_class_probability(cfg: NetworkConfig, zone: int, idle_count: float, k: int) -> float:
    """Probability that a request at ``zone`` falls in en-route class ``k``
    (1-based) when ``idle_count`` cars are available."""
    K = int(cfg.n_classes[zone])
    if not 1 <= k <= K:
        raise ValueError(f"class {k} outside 1..{K} for zone {zone}")
    if idle_count < 0:
        raise ValueError("idle count must be nonnegative")
    return float(pickup_class_probabilities(cfg, zone, idle_count)[k - 1])


def logit(alpha, beta, price):
    """MNL acceptance probability ``exp(a - b x) / (1 + exp(a - b x))``."""
    return expit(np.asarray(alpha) - np.asarray(beta) * np.asarray(price))


def acceptance_probability(cfg: NetworkConfig, i: int, j: int, k: int, price: float) -> float:
    """Probability that a rider on pair ``(i, j)`` offered class ``k`` (1-based)
    accepts ``price``."""
    p = cfg.trip_index(i, j)
    if not 1 <= k <= cfg.n_classes[i]:
        raise ValueError(f"class {k} outside 1..{cfg.n_classes[i]}")
    return float(logit(cfg.alpha[p, k - 1], cfg.beta[p], price))


# -- JSON config -----------------------------------------------------------
def _dense(cfg: NetworkConfig, values, pairs, fill=0.0):
    Z = cfg.n_zones
    shape = (Z, Z) + np.shape(values)[1:]
    out = np.full(shape, fill, dtype=float)
    for n, (i, j) in enumerate(pairs):
        out[i, j] = values[n]
    return out


def config_to_dict(cfg: NetworkConfig) -> dict[str, Any]:
    """Serialize to the JSON schema accepted by :func:`config_from_dict`."""
    inv = lambda v: np.where(v > 0, 1.0 / np.where(v > 0, v, 1.0), 0.0)  # noqa: E731
    out = {
        "zones": [{"name": z, "sigma": float(s)} for z, s in zip(cfg.zones, cfg.sigma)],
        "fleet_size": cfg.fleet_size,
        "lambda": _dense(cfg, cfg.lam, cfg.trip_pairs).tolist(),
        "inv_mu": _dense(cfg, inv(cfg.mu), cfg.trip_pairs).tolist(),
        "inv_mu_tilde": _dense(cfg, inv(cfg.mu_tilde), cfg.reposition_pairs).tolist(),
        "reposition_pairs": [list(p) for p in cfg.reposition_pairs],
        "omega": cfg.omega,
        "delta": cfg.delta.tolist(),
        "inv_nu": (1.0 / cfg.nu).tolist(),
        "n_classes": cfg.n_classes.tolist(),
        "alpha": _dense(cfg, cfg.alpha, cfg.trip_pairs).tolist(),
        "beta": _dense(cfg, cfg.beta, cfg.trip_pairs).tolist(),
        "phi": _dense(cfg, cfg.phi, cfg.trip_pairs).tolist(),
        "psi": _dense(cfg, cfg.psi, cfg.reposition_pairs).tolist(),
        "zeta": _dense(cfg, cfg.zeta, cfg.reposition_pairs).tolist(),
    }
    if cfg.alpha0 is not None:
        out["alpha0"] = _dense(cfg, cfg.alpha0, cfg.trip_pairs).tolist()
    if cfg.phi0 is not None:
        out["phi0"] = _dense(cfg, cfg.phi0, cfg.trip_pairs).tolist()
    return out


def config_from_dict(data: Mapping[str, Any]) -> NetworkConfig:
    """Build a config from the JSON schema (see README for the key list)."""
    required = ("zones", "fleet_size", "lambda", "inv_mu", "delta", "inv_nu", "alpha", "beta")
    missing = [k for k in required if k not in data]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    zones = data["zones"]
    names = [z["name"] if isinstance(z, Mapping) else str(z) for z in zones]
    sigma = [float(z.get("sigma", 1.0)) if isinstance(z, Mapping) else 1.0 for z in zones]
    lam = np.asarray(data["lambda"], dtype=float)
    inv_mu = np.asarray(data["inv_mu"], dtype=float)
    inv_mu_tilde = data.get("inv_mu_tilde")
    reps = data.get("reposition_pairs")
    if inv_mu_tilde is not None:
        inv_mu_tilde = np.asarray(inv_mu_tilde, dtype=float)
        if reps is None:
            Z = len(names)
            reps = [(i, j) for i in range(Z) for j in range(Z) if i != j and inv_mu_tilde[i, j] > 0]
        # entries off the reposition graph are irrelevant; keep them finite
        inv_mu_tilde = np.where(inv_mu_tilde > 0, inv_mu_tilde, 1.0)
    # zero travel times outside the trip graph would make 1/mu infinite
    inv_mu = np.where(lam > 0, inv_mu, np.where(inv_mu > 0, inv_mu, 1.0))
    return NetworkConfig.from_matrices(
        lam,
        inv_mu,
        fleet_size=int(data["fleet_size"]),
        inv_nu=data["inv_nu"],
        delta=data["delta"],
        alpha=data["alpha"],
        beta=data["beta"],
        omega=float(data.get("omega", 4.0)),
        sigma=sigma,
        inv_mu_tilde=inv_mu_tilde,
        phi=data.get("phi", 0.0),
        psi=data.get("psi", 0.0),
        zeta=data.get("zeta", 0.0),
        reposition_pairs=reps,
        n_classes=data.get("n_classes"),
        alpha0=data.get("alpha0"),
        phi0=data.get("phi0"),
        zones=names,
    )


def load_config(path: str | Path) -> NetworkConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def save_config(cfg: NetworkConfig, path: str | Path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2)
