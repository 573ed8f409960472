"""Centralized reference solutions. Dense linear algebra only; no shared solver code
with the local solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize

from dacnet.barrier import feasible_start, wrap_barrier


class OracleError(RuntimeError):
    pass


@dataclass
class OracleSolution:
    x_star: np.ndarray
    v_star: np.ndarray
    kkt_residual_inf: float
    method: str


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.atleast_2d(np.asarray(M, dtype=float))


def _full_row_rank(A: np.ndarray) -> bool:
    if A.shape[0] == 0:
        return True
    s = np.linalg.svd(A, compute_uv=False)
    return s[-1] > max(A.shape) * np.finfo(float).eps * s[0]


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if np.size(v) else 0.0


def oracle_projection(A, b, z) -> OracleSolution:
    """Closest point to z on {x : Ax = b}."""
    A = _dense(A)
    b = np.asarray(b, dtype=float)
    z = np.asarray(z, dtype=float)
    if A.shape[0] == 0:
        return OracleSolution(z.copy(), np.empty(0), 0.0, "projection")
    if not _full_row_rank(A):
        raise OracleError("constraint matrix is rank deficient")
    G = sla.cho_factor(A @ A.T)
    v = sla.cho_solve(G, A @ z - b)
    x = z - A.T @ v
    res = max(_inf(x - z + A.T @ v), _inf(A @ x - b))
    return OracleSolution(x, v, res, "projection")


def oracle_quadratic(Q, c, A, b) -> OracleSolution:
    """Minimizer of 1/2 x'Qx + c'x subject to Ax = b, by the Schur-complement formula."""
    Q = _dense(Q)
    c = np.asarray(c, dtype=float)
    A = _dense(A)
    b = np.asarray(b, dtype=float)
    Qf = sla.cho_factor(Q)
    Qinv_c = sla.cho_solve(Qf, c)
    if A.shape[0] == 0 or A.size == 0:
        x = -Qinv_c
        return OracleSolution(x, np.empty(0), _inf(Q @ x + c), "quadratic")
    Qinv_At = sla.cho_solve(Qf, A.T)
    S = A @ Qinv_At
    if not _full_row_rank(S):
        raise OracleError("A Q^-1 A' is singular")
    y = np.linalg.solve(S, b + A @ Qinv_c)
    x = sla.cho_solve(Qf, A.T @ y - c)
    v = -y
    res = max(_inf(Q @ x + c + A.T @ v), _inf(A @ x - b))
    return OracleSolution(x, v, res, "quadratic")


def _newton_kkt(obj, A, b, x, tol, max_iters=200):
    """Feasible-start equality-constrained Newton; returns (x, v, residual)."""
    k = A.shape[0]
    v = np.zeros(k)
    for _ in range(max_iters):
        g = obj.grad(x)
        if k:
            # least-squares multiplier for the current point
            v = np.linalg.lstsq(A.T, -g, rcond=None)[0]
        res = max(_inf(g + A.T @ v), _inf(A @ x - b))
        if res <= tol:
            return x, v, res
        H = _dense(obj.hessian(x))
        K = np.block([[H, A.T], [A, np.zeros((k, k))]])
        rhs = np.concatenate([-g, b - A @ x])
        step = np.linalg.solve(K, rhs)[: len(x)]
        f0 = obj.value(x)
        slope = float(g @ step)
        a = 1.0
        if -slope <= 1e-13 * (1.0 + abs(f0)) and obj.in_domain(x + step):
            x = x + step
            continue
        while a > 1e-14:
            xt = x + a * step
            if obj.in_domain(xt) and obj.value(xt) <= f0 + 0.25 * a * min(slope, 0.0):
                break
            a *= 0.5
        else:
            raise OracleError("Newton line search failed")
        x = xt
        if a == 1.0 and _inf(step) < 1e-15:
            break
    g = obj.grad(x)
    v = np.linalg.lstsq(A.T, -g, rcond=None)[0] if k else v
    res = max(_inf(g + A.T @ v), _inf(A @ x - b))
    if res > tol:
        raise OracleError(f"Newton stopped at KKT residual {res:.2e}")
    return x, v, res


def oracle_entropy(p, t: float = 100.0, tol: float = 1e-10) -> OracleSolution:
    """Barrier solution x_t* by centralized damped Newton from a feasible start."""
    bp = wrap_barrier(p, t)
    x0 = feasible_start(bp)
    A = _dense(p.constraints.A)
    x, v, res = _newton_kkt(bp.wrapped.objective, A, p.constraints.b, x0, tol)
    if np.any(x <= 0):
        raise OracleError("barrier solution left the positive orthant")
    return OracleSolution(x, v, res, f"interior-point t={t:g}")


def oracle_entropy_dual(p, tol: float = 1e-10) -> OracleSolution:
    """Unbarriered entropy minimizer through its smooth concave dual.

    The optimum is x = exp(-1 - A'v) with v minimizing
    sum(exp(-1 - A'v)) + v'b, so positivity holds automatically.
    """
    A = _dense(p.constraints.A)
    b = np.asarray(p.constraints.b, dtype=float)

    def primal(v):
        return np.exp(-1.0 - A.T @ v)

    def fun(v):
        x = primal(v)
        return float(x.sum() + v @ b), b - A @ x

    def hess(v):
        return (A * primal(v)) @ A.T

    res = minimize(fun, np.zeros(A.shape[0]), jac=True, hess=hess, method="trust-exact",
                   options={"gtol": tol * 1e-2, "maxiter": 1000})
    v = res.x
    for _ in range(5):  # Newton polish past the optimizer's stopping rule
        v = v - np.linalg.solve(hess(v), fun(v)[1])
    x = primal(v)
    kkt = max(_inf(np.log(x) + 1.0 + A.T @ v), _inf(A @ x - b))
    if kkt > tol:
        raise OracleError(f"dual solve stopped at KKT residual {kkt:.2e}")
    return OracleSolution(x, v, kkt, "entropy-dual")


def oracle_dense_kkt(p, tol: float = 1e-10) -> OracleSolution:
    """Whole-problem KKT solve: one bordered solve for quadratics, Newton otherwise."""
    if p.n > 500:
        raise OracleError("dense KKT oracle is limited to n <= 500")
    A = _dense(p.constraints.A)
    b = p.constraints.b
    obj = p.objective
    k = A.shape[0]
    if obj.is_quadratic:
        Q = _dense(obj.Q)
        K = np.block([[Q, A.T], [A, np.zeros((k, k))]])
        sol = np.linalg.solve(K, np.concatenate([-obj.c, b]))
        x, v = sol[: p.n], sol[p.n:]
        res = max(_inf(Q @ x + obj.c + A.T @ v), _inf(A @ x - b))
        return OracleSolution(x, v, res, "dense-kkt")
    if obj.in_domain(np.ones(p.n)) and k:
        x0 = np.ones(p.n) - A.T @ np.linalg.solve(A @ A.T, A @ np.ones(p.n) - b)
    else:
        x0 = np.ones(p.n)
    if not obj.in_domain(x0):
        raise OracleError("no domain-feasible start for the dense Newton oracle")
    x, v, res = _newton_kkt(obj, A, b, x0, tol)
    return OracleSolution(x, v, res, "dense-newton")
