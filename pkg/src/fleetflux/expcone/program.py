"""Canonical conic program and solve report."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cone import cone_violation_std, to_standard


class SolveStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible-detected"
    UNBOUNDED = "unbounded-detected"
    ITERATION_LIMIT = "iteration-limit"


@dataclass(frozen=True, eq=False)
class ConeProgram:
    """maximize ``c @ v + offset`` subject to ``A @ v == b``, ``v[nonneg] >= 0``
    and ``v[exp_cones[i]]`` in the exponential cone for every row ``i``.

    ``exp_cones`` rows are index triples ``(a1, a2, a3)`` in the
    ``a3 <= a2 log(a1 / a2)`` orientation.  Variables not listed in any cone
    are free.  Index sets must be disjoint.
    """

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    exp_cones: np.ndarray
    nonneg: np.ndarray
    offset: float = 0.0
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        c = np.asarray(self.c, dtype=float).ravel()
        n = len(c)
        A = sp.csr_matrix(self.A, dtype=float) if self.A is not None else sp.csr_matrix((0, n))
        if A.shape[1] != n:
            raise ValueError(f"A has {A.shape[1]} columns for {n} variables")
        b = np.asarray(self.b, dtype=float).ravel()
        if len(b) != A.shape[0]:
            raise ValueError("b length does not match the rows of A")
        exp = np.asarray(self.exp_cones, dtype=np.int64).reshape(-1, 3)
        nonneg = np.unique(np.asarray(self.nonneg, dtype=np.int64).ravel())
        used = np.concatenate([exp.ravel(), nonneg])
        if len(used) and (used.min() < 0 or used.max() >= n):
            raise ValueError("cone index out of range")
        if len(np.unique(used)) != len(used):
            raise ValueError("a variable appears in more than one cone block")
        if self.names is not None and len(self.names) != n:
            raise ValueError("one name per variable is required")
        set_("c", c)
        set_("A", A)
        set_("b", b)
        set_("exp_cones", exp)
        set_("nonneg", nonneg)
        set_("offset", float(self.offset))

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, v) -> float:
        return float(self.c @ v + self.offset)

    def equality_residual(self, v) -> float:
        return float(np.linalg.norm(self.A @ v - self.b)) if self.m else 0.0

    def cone_violation(self, v) -> float:
        """Largest violation over the nonnegative and exponential blocks."""
        v = np.asarray(v, dtype=float)
        worst = float(np.max(-v[self.nonneg], initial=0.0))
        if len(self.exp_cones):
            worst = max(worst, float(np.max(cone_violation_std(to_standard(v[self.exp_cones])))))
        return worst

    def presolve(self, tol: float = 1e-10) -> tuple["ConeProgram", np.ndarray]:
        """Drop linearly dependent equality rows.

        Returns the reduced program and the indices of the kept rows.  Raises
        ``ValueError`` when the dropped rows are inconsistent with the rest.
        """
        if self.m == 0:
            return self, np.arange(0)
        dense = self.A.toarray()
        _, R, piv = sla.qr(dense.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > tol * max(1.0, diag.max(initial=0.0))))
        keep = np.sort(piv[:rank])
        if rank < self.m:
            drop = np.setdiff1d(np.arange(self.m), keep)
            coef, *_ = np.linalg.lstsq(dense[keep].T, dense[drop].T, rcond=None)
            if np.max(np.abs(coef.T @ self.b[keep] - self.b[drop])) > 1e-8 * (1 + np.abs(self.b).max()):
                raise ValueError("equality constraints are inconsistent")
        reduced = ConeProgram(self.c, self.A[keep], self.b[keep], self.exp_cones,
                              self.nonneg, self.offset, self.names)
        return reduced, keep


@dataclass
class SolveReport:
    status: SolveStatus
    x: np.ndarray
    objective: float
    eq_residual: float
    cone_violation: float
    iterations: int
    wall_time: float
    gap: float = float("nan")
    y_eq: np.ndarray | None = None
    engine: str = "builtin"
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == SolveStatus.OPTIMAL
