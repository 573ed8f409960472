"""Log-barrier reduction of inequality constraints to a smooth equality-constrained problem."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from dacnet.problems import (
    Constraints,
    DomainError,
    Objective,
    ProblemInstance,
    ValidationReport,
    compute_delta_R,
    compute_kappa,
    operator_norm,
)

FEASIBLE_MARGIN = 1e-6


class InfeasibleError(RuntimeError):
    pass


class BarrierObjective(Objective):
    """F(x) + (1/t) * sum_l -log(-g_l(x)) for affine g(x) = Cx - d.

    The barrier term of constraint l is charged to the local term f_l.
    """

    def __init__(self, base: Objective, ineq, t: float):
        self.base = base
        self.ineq = ineq
        self.t = float(t)
        self.n = base.n
        self.m = base.m
        self.C = sp.csr_array(ineq.C)
        self.d = np.asarray(ineq.d, dtype=float)
        self._slot = {int(l): k for k, l in enumerate(ineq.U)}
        self._touch: dict[bytes, np.ndarray] = {}

    def _rows(self, idx) -> np.ndarray:
        key = np.asarray(idx, dtype=np.int64).tobytes()
        rows = self._touch.get(key)
        if rows is None:
            rows = self.ineq.rows_touching(idx)
            self._touch[key] = rows
        return rows

    def slack(self, x, rows=None) -> np.ndarray:
        if rows is None:
            return self.d - self.C @ x
        Cr = self.C[rows, :]
        return self.d[rows] - Cr @ x

    def barrier_value(self, x) -> float:
        s = self.slack(x)
        if np.any(s <= 0):
            raise DomainError("barrier undefined outside the strict feasible set")
        return float(-np.sum(np.log(s)) / self.t)

    def value(self, x):
        return self.base.value(x) + self.barrier_value(x)

    def local_value(self, i, x):
        out = self.base.local_value(i, x)
        k = self._slot.get(int(i))
        if k is not None:
            s = float(self.slack(x, [k])[0])
            if s <= 0:
                raise DomainError("barrier undefined outside the strict feasible set")
            out -= math.log(s) / self.t
        return out

    def barrier_grad_rows(self, x, idx) -> np.ndarray:
        rows = self._rows(idx)
        s = self.slack(x, rows)
        if np.any(s <= 0):
            raise DomainError("barrier undefined outside the strict feasible set")
        block = self.C[rows, :][:, idx]
        return (block.T @ (1.0 / s)) / self.t

    def grad_rows(self, x, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return self.base.grad_rows(x, idx) + self.barrier_grad_rows(x, idx)

    def barrier_hessian(self, x) -> sp.csr_array:
        s = self.slack(x)
        if np.any(s <= 0):
            raise DomainError("barrier undefined outside the strict feasible set")
        return sp.csr_array(self.C.T @ sp.diags_array(1.0 / (self.t * s * s)) @ self.C)

    def hessian(self, x):
        return sp.csr_array(self.base.hessian(x) + self.barrier_hessian(x))

    def hessian_block(self, x, idx):
        idx = np.asarray(idx, dtype=np.int64)
        rows = self._rows(idx)
        s = self.slack(x, rows)
        block = self.C[rows, :][:, idx].toarray()
        return self.base.hessian_block(x, idx) + (block.T * (1.0 / (self.t * s * s))) @ block

    def j_matrix(self, x, y):
        sx, sy = self.slack(x), self.slack(y)
        corr = self.C.T @ sp.diags_array(1.0 / (self.t * sx * sy)) @ self.C
        return sp.csr_array(self.base.j_matrix(x, y) + corr)

    def in_domain(self, x, idx=None):
        if not self.base.in_domain(x, idx):
            return False
        rows = None if idx is None else self._rows(np.asarray(idx, dtype=np.int64))
        return bool(np.all(self.slack(x, rows) > 0))


@dataclass
class BarrierProblem:
    base: ProblemInstance
    t: float
    wrapped: ProblemInstance


def wrap_barrier(p: ProblemInstance, t: float) -> BarrierProblem:
    """Move the inequality constraints of ``p`` into the objective with weight 1/t."""
    if not t > 0:
        raise ValueError("barrier parameter t must be positive")
    ineq = p.constraints.inequalities
    cons = Constraints(p.constraints.A, p.constraints.b, p.constraints.W)
    if ineq is None or len(ineq.U) == 0:
        obj = p.objective
    else:
        obj = BarrierObjective(p.objective, ineq, t)
    meta = dict(p.meta, t=float(t))
    wrapped = ProblemInstance(obj, cons, p.kind, p.graph, meta)
    return BarrierProblem(p, float(t), wrapped)


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def feasible_start(bp: BarrierProblem, center: np.ndarray | None = None) -> np.ndarray:
    """A point with Ax = b and every g_l(x) < -1e-6.

    First tries the projection of ``center`` (all ones by default) onto the
    affine set; if that is not strictly feasible, maximizes the common margin
    s in g_l(x) + s <= 0 (capped at 1) by linear programming (phase I).
    """
    p = bp.base
    A = _dense(p.constraints.A)
    b = p.constraints.b
    xc = np.ones(p.n) if center is None else np.asarray(center, dtype=float)
    if A.shape[0]:
        lam = np.linalg.solve(A @ A.T, A @ xc - b)
        x = xc - A.T @ lam
    else:
        x = xc.copy()
    ineq = p.constraints.inequalities
    if ineq is None or len(ineq.U) == 0:
        return x
    C = _dense(ineq.C)
    d = np.asarray(ineq.d, dtype=float)
    if np.all(d - C @ x > FEASIBLE_MARGIN):
        return x
    return _phase_one(A, b, C, d, p.n)


def _phase_one(A, b, C, d, n):
    """Max-margin LP: maximize s subject to Cx + s <= d, Ax = b, s <= 1."""
    k = A.shape[0]
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    A_ub = np.hstack([C, np.ones((C.shape[0], 1))])
    A_eq = np.hstack([A, np.zeros((k, 1))]) if k else None
    b_eq = b if k else None
    res = linprog(cost, A_ub=A_ub, b_ub=d, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * n + [(None, 1.0)], method="highs")
    if res.status != 0 or -res.fun <= FEASIBLE_MARGIN:
        raise InfeasibleError("phase I found no strictly feasible point")
    return res.x[:n]


@dataclass
class BarrierCertificate:
    M_t: float
    kappa_t: float
    delta_R_t: float
    box: tuple
    sampled: bool = True


def certify(bp: BarrierProblem, part, R: int, report: ValidationReport, growth,
            samples: int = 8, seed: int = 0, box: tuple | None = None) -> BarrierCertificate:
    """Rate constants for the barrier problem from sampled barrier Hessian norms.

    ``box`` is the coordinate range of the sample points; it defaults to
    (0.5, 2) times the extreme coordinates of the feasible start.
    """
    obj = bp.wrapped.objective
    M_t = 0.0
    if isinstance(obj, BarrierObjective):
        if box is None:
            x0 = feasible_start(bp)
            box = (0.5 * float(x0.min()), 2.0 * float(x0.max()))
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            x = rng.uniform(box[0], box[1], bp.base.n)
            if obj.in_domain(x):
                M_t = max(M_t, operator_norm(obj.barrier_hessian(x)))
    kappa_t = compute_kappa(report.c1, report.L1 + M_t, report.c2, report.norm_A)
    delta = compute_delta_R(kappa_t, R, bp.base.m, growth.dimension, growth.density)
    return BarrierCertificate(M_t, kappa_t, delta, tuple(box) if box else (), True)


def duality_gap_check(p: ProblemInstance, x_t_star, x_star, t: float) -> tuple[float, float]:
    """(F(x_t*) - F(x*), N/t) for the unbarriered objective of ``p``."""
    obj = p.objective.base if isinstance(p.objective, BarrierObjective) else p.objective
    gap = obj.value(np.asarray(x_t_star)) - obj.value(np.asarray(x_star))
    return float(gap), p.n / float(t)
