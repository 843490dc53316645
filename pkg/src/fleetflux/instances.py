"""The three five-zone city instances and their parameter conventions.

Zones are ordered SU1, SU2, SU3 (suburbs), MT (midtown), DT (downtown).
Travel times are in hours.
"""
from __future__ import annotations

import numpy as np

from .model import NetworkConfig

ZONES = ("SU1", "SU2", "SU3", "MT", "DT")

_T1 = [
    [0.15, 0.25, 1.25, 0.2, 0.4],
    [0.25, 0.10, 1.1, 0.1, 0.3],
    [1.25, 1.1, 0.1, 1, 0.65],
    [0.25, 0.15, 1, 0.15, 0.25],
    [0.5, 0.4, 0.75, 0.25, 0.2],
]
_T23 = [
    [0.15, 0.25, 1.25, 0.2, 0.4],
    [0.25, 0.10, 1.1, 0.1, 0.3],
    [1.25, 1.1, 0.1, 1, 0.65],
    [0.2, 0.1, 1, 0.15, 0.25],
    [0.4, 0.3, 0.65, 0.25, 0.2],
]

INSTANCES = {
    # evening rush hour: downtown to the suburbs
    "instance1": (
        [
            [0.0648, 0.0108, 0.0, 0.0324, 0.0],
            [0.0108, 0.0648, 0.0, 0.0324, 0.0],
            [0.0, 0.0, 0.0756, 0.0324, 0.0],
            [0.0216, 0.0216, 0.0216, 0.0216, 0.0216],
            [0.324, 0.324, 0.324, 0.108, 0.0],
        ],
        _T1,
    ),
    # going out: traffic heads into midtown
    "instance2": (
        [
            [0.072, 0.0, 0.0, 0.648, 0.0],
            [0.0, 0.048, 0.0, 0.432, 0.0],
            [0.0, 0.0, 0.048, 0.432, 0.0],
            [0.024, 0.024, 0.024, 0.384, 0.024],
            [0.0, 0.0, 0.0, 0.108, 0.012],
        ],
        _T23,
    ),
    # late night: midtown back to the suburbs
    "instance3": (
        [
            [0.108, 0.006, 0.0, 0.006, 0.0],
            [0.006, 0.108, 0.0, 0.006, 0.0],
            [0.0, 0.0, 0.108, 0.012, 0.0],
            [0.396, 0.396, 0.396, 0.066, 0.066],
            [0.0, 0.0, 0.0, 0.012, 0.108],
        ],
        _T23,
    ),
}

# Utility conventions.  "calibrated": a trip is worth 10, plus 20 per hour of
# delivery, minus 10 per hour of pickup, with Gumbel noise of scale 5, so
# alpha = (10 + 20 / mu - 10 / nu) / 5 and beta = 1 / 5.  "printed": the
# literal alpha = (10 - 10 / nu) / 5 and beta = 4.
CONVENTIONS = ("calibrated", "printed")

DEFAULT_K0 = 3
DEFAULT_ZETA = 0.9


def instance_name(name) -> str:
    key = str(name).strip().lower()
    if key in ("1", "2", "3"):
        key = f"instance{key}"
    if key not in INSTANCES:
        raise KeyError(f"unknown instance {name!r}; choose from {sorted(INSTANCES)}")
    return key


def instance_matrices(name):
    lam, inv_mu = INSTANCES[instance_name(name)]
    return np.array(lam, dtype=float), np.array(inv_mu, dtype=float)


def load_instance(name, fleet_size: int = 200, K0: int = DEFAULT_K0, *,
                  convention: str = "calibrated", zeta: float = 0.0) -> NetworkConfig:
    """Network config for one of the three city instances."""
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    if K0 < 1:
        raise ValueError("K0 must be at least 1")
    lam, inv_mu = instance_matrices(name)
    k = np.arange(1, K0 + 1)
    inv_nu = k / 12.0
    if convention == "calibrated":
        alpha = (10.0 + 20.0 * inv_mu[:, :, None] - 10.0 * inv_nu[None, None, :]) / 5.0
        alpha0 = (10.0 + 20.0 * inv_mu) / 5.0
        beta = 1.0 / 5.0
    else:
        alpha = np.broadcast_to((10.0 - 10.0 * inv_nu) / 5.0, (5, 5, K0))
        alpha0 = np.full((5, 5), 2.0)
        beta = 20.0 / 5.0
    return NetworkConfig.from_matrices(
        lam,
        inv_mu,
        fleet_size=fleet_size,
        inv_nu=inv_nu,
        delta=k.astype(float),
        alpha=alpha,
        beta=beta,
        omega=4.0,
        sigma=1.0,
        phi=0.0,
        psi=0.0,
        zeta=zeta,
        alpha0=alpha0,
        phi0=0.0,
        zones=ZONES,
    )
