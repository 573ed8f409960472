"""Local equality-constrained subproblems solved at a single fusion center.

A center's subproblem has free variables on its extended region ``F``. The
objective terms see the current iterate on the 2m-neighborhood of ``F``; the
constraint rows see it on the 4m-neighborhood. Everything here is a pure
function of the problem, the partition, the center and those values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import minres

from dacnet.graph import UNREACHED

ARMIJO = 1e-4
MIN_STEP = 2.0**-30
RCOND_FLOOR = 1e-14
RANK_RTOL = 1e-9


class LocalSolverError(RuntimeError):
    def __init__(self, center: int, message: str):
        super().__init__(f"center {center}: {message}")
        self.center = center


@dataclass(eq=False)
class LocalStructure:
    """Index bookkeeping and constant matrices for one center (iterate independent)."""

    center: int
    free: np.ndarray
    region_pos: np.ndarray      # positions of D_lam inside free
    nb4: np.ndarray
    free_in_nb4: np.ndarray
    bd2: np.ndarray             # D_{lam,R,2m} minus free
    bd2_in_nb4: np.ndarray
    bd4: np.ndarray             # D_{lam,R,4m} minus free
    bd4_in_nb4: np.ndarray
    rows: np.ndarray            # constraint row positions actually enforced
    dropped: np.ndarray         # rows of W_{lam,R} dependent on the enforced ones
    A_free: np.ndarray
    A_bd: np.ndarray
    b_rows: np.ndarray
    Q_free: np.ndarray | None = None
    Q_bd: np.ndarray | None = None
    c_free: np.ndarray | None = None
    lu: tuple | None = None


def build_structure(p, part, lam: int) -> LocalStructure:
    m = p.m
    free = part.extended[lam]
    nb2 = part.nbhd[lam][2 * m]
    nb4 = part.nbhd[lam][4 * m]
    bd2 = np.setdiff1d(nb2, free)
    bd4 = np.setdiff1d(nb4, free)
    A = p.constraints.A
    rows, dropped = independent_rows(A, part.w_local[lam], free, p.constraints.W, part.graph.bfs(part.regions[lam]))
    A_rows = A[rows, :]
    outside = A_rows[:, np.setdiff1d(np.arange(p.n), nb4)]
    if outside.nnz and np.any(outside.data != 0):
        raise LocalSolverError(lam, "constraint rows reach beyond the 4m-neighborhood")
    st = LocalStructure(
        center=lam,
        free=free,
        region_pos=np.searchsorted(free, part.regions[lam]),
        nb4=nb4,
        free_in_nb4=np.searchsorted(nb4, free),
        bd2=bd2,
        bd2_in_nb4=np.searchsorted(nb4, bd2),
        bd4=bd4,
        bd4_in_nb4=np.searchsorted(nb4, bd4),
        rows=rows,
        dropped=dropped,
        A_free=A_rows[:, free].toarray(),
        A_bd=A_rows[:, bd4].toarray(),
        b_rows=p.constraints.b[rows].astype(float),
    )
    obj = p.objective
    if obj.is_quadratic:
        Qf = obj.Q[free, :]
        st.Q_free = Qf[:, free].toarray()
        st.Q_bd = Qf[:, bd2].toarray()
        st.c_free = obj.c[free].copy()
        K = saddle_matrix(st.Q_free, st.A_free)
        st.lu = _factor(K, lam)
    return st


def independent_rows(A, rows, free, row_vertices, region_dist, rtol: float = RANK_RTOL):
    """Split the local rows into a linearly independent subset and the rest.

    Rows are scanned in order of (hop distance of the row vertex to the
    center's region, vertex id); a row is dropped when its restriction to the
    free set lies in the span of the rows kept before it. Dropped rows are
    consistent with the kept ones at any point satisfying Ax = b, so the
    global minimizer remains a fixed point.
    """
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        return rows, rows
    dist = region_dist[np.asarray(row_vertices)[rows]]
    order = np.lexsort((np.asarray(row_vertices)[rows], dist))
    block = A[rows[order], :][:, free].toarray()
    r = sla.qr(block.T, mode="r", check_finite=False)[0]
    diag = np.abs(np.diag(r)) if r.shape[0] >= rows.size else np.abs(
        np.concatenate([np.diag(r), np.zeros(rows.size - r.shape[0])]))
    scale = np.linalg.norm(block, axis=1).max()
    keep = diag > rtol * scale
    return np.sort(rows[order][keep]), np.sort(rows[order][~keep])


def saddle_matrix(H: np.ndarray, A: np.ndarray) -> np.ndarray:
    k = A.shape[0]
    return np.block([[H, A.T], [A, np.zeros((k, k))]])


def _factor(K: np.ndarray, lam: int):
    lu, piv = sla.lu_factor(K, check_finite=False)
    if K.shape[0]:
        (rcond, _) = sla.lapack.dgecon(lu, np.abs(K).sum(axis=0).max(), norm="1")
        if not rcond > RCOND_FLOOR:
            raise LocalSolverError(lam, f"singular local KKT matrix (rcond={rcond:.1e}); "
                                        "local stability fails")
    return lu, piv


@dataclass(eq=False)
class LocalProblem:
    """Subproblem data for one center at one iterate."""

    structure: LocalStructure
    objective: object
    n: int
    view: np.ndarray            # iterate restricted to D_{lam,R,4m}
    rhs: np.ndarray             # b_k minus frozen boundary contribution

    @property
    def center(self) -> int:
        return self.structure.center

    @property
    def free(self) -> np.ndarray:
        return self.structure.free

    @property
    def frozen(self) -> np.ndarray:
        return self.structure.bd4

    @property
    def frozen_values(self) -> np.ndarray:
        return self.view[self.structure.bd4_in_nb4]

    @property
    def rows(self) -> np.ndarray:
        return self.structure.rows

    @property
    def start(self) -> np.ndarray:
        return self.view[self.structure.free_in_nb4].copy()

    def embed(self, u: np.ndarray) -> np.ndarray:
        """Global vector: u on the free set, the iterate on the 2m boundary, zero elsewhere."""
        st = self.structure
        x = np.zeros(self.n)
        x[st.bd2] = self.view[st.bd2_in_nb4]
        x[st.free] = u
        return x

    def gradient(self, u: np.ndarray) -> np.ndarray:
        st = self.structure
        if st.Q_free is not None:
            return st.Q_free @ u + (st.Q_bd @ self.view[st.bd2_in_nb4] + st.c_free)
        return self.objective.grad_rows(self.embed(u), st.free)


@dataclass
class LocalSolution:
    w: np.ndarray
    v: np.ndarray
    theta_inf: float
    eta_inf: float
    newton_iters: int = 0
    converged: bool = True


def assemble_local(p, part, lam: int, x: np.ndarray, structure: LocalStructure | None = None
                   ) -> LocalProblem:
    """Local subproblem of center ``lam`` at global iterate ``x``.

    Only ``x`` on D_{lam,R,4m} is read.
    """
    st = structure if structure is not None else build_structure(p, part, lam)
    return assemble_from_mailbox(p, st, np.asarray(x, dtype=float)[st.nb4])


def assemble_from_mailbox(p, st: LocalStructure, view: np.ndarray) -> LocalProblem:
    """Same as :func:`assemble_local` from the values a center holds on D_{lam,R,4m}."""
    view = np.array(view, dtype=float)
    rhs = st.b_rows - st.A_bd @ view[st.bd4_in_nb4]
    return LocalProblem(st, p.objective, p.n, view, rhs)


def residuals(lp: LocalProblem, w: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """l-infinity norms of the stationarity and feasibility residuals at (w, v)."""
    st = lp.structure
    theta = lp.gradient(w) + st.A_free.T @ v
    eta = st.A_free @ w - lp.rhs
    return _inf(theta), _inf(eta)


def _inf(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def solve_local_quadratic(lp: LocalProblem) -> LocalSolution:
    """Direct solve of the bordered KKT system (constant-Hessian objectives)."""
    st = lp.structure
    if st.lu is None:
        raise LocalSolverError(lp.center, "direct solve needs a quadratic objective")
    g0 = st.Q_bd @ lp.view[st.bd2_in_nb4] + st.c_free
    sol = sla.lu_solve(st.lu, np.concatenate([-g0, lp.rhs]), check_finite=False)
    k = st.free.size
    w, v = sol[:k], sol[k:]
    th, et = residuals(lp, w, v)
    return LocalSolution(w, v, th, et)


class _Reached(Exception):
    def __init__(self, y):
        self.y = y


def solve_local_iterative(lp: LocalProblem, tol: float) -> LocalSolution:
    """MINRES on the bordered system, stopped at the first iterate with residuals <= tol.

    Warm start: primal at the current iterate, multipliers at zero. Falls back
    to the direct solve if MINRES stalls above ``tol``.
    """
    st = lp.structure
    if st.lu is None:
        raise LocalSolverError(lp.center, "iterative solve needs a quadratic objective")
    k = st.free.size
    K = saddle_matrix(st.Q_free, st.A_free)
    rhs = np.concatenate([-(st.Q_bd @ lp.view[st.bd2_in_nb4] + st.c_free), lp.rhs])
    y0 = np.concatenate([lp.start, np.zeros(st.rows.size)])

    def small_enough(y):
        r = rhs - K @ y
        return _inf(r) <= tol

    if small_enough(y0):
        y = y0
        iters = 0
    else:
        count = [0]

        def cb(y):
            count[0] += 1
            if small_enough(y):
                raise _Reached(y.copy())

        try:
            y, _ = minres(K, rhs, x0=y0, rtol=1e-15, maxiter=10 * K.shape[0], callback=cb)
        except _Reached as hit:
            y = hit.y
        iters = count[0]
    w, v = y[:k], y[k:]
    th, et = residuals(lp, w, v)
    if max(th, et) > tol:
        exact = solve_local_quadratic(lp)
        exact.newton_iters = iters
        return exact
    return LocalSolution(w, v, th, et, iters, True)


def solve_local_newton(lp: LocalProblem, tol: float = 1e-12, max_iters: int = 100
                       ) -> LocalSolution:
    """Damped Newton on the local KKT conditions with a backtracking residual search.

    Steps are halved until the trial point stays in the objective's domain and
    the l2 KKT residual drops by the Armijo factor.
    """
    st = lp.structure
    obj = lp.objective
    k = st.free.size
    w = lp.start
    v = np.zeros(st.rows.size)
    if not obj.in_domain(lp.embed(w), st.free):
        raise LocalSolverError(lp.center, "starting point outside the objective's domain")

    def kkt_residual(w, v):
        return np.concatenate([lp.gradient(w) + st.A_free.T @ v, st.A_free @ w - lp.rhs])

    r = kkt_residual(w, v)
    it = 0
    converged = False
    while True:
        th, et = _inf(r[:k]), _inf(r[k:])
        if max(th, et) <= tol:
            converged = True
            break
        if it >= max_iters:
            break
        H = obj.hessian_block(lp.embed(w), st.free)
        K = saddle_matrix(H, st.A_free)
        try:
            step = np.linalg.solve(K, -r)
        except np.linalg.LinAlgError as exc:
            raise LocalSolverError(lp.center, f"singular Newton system: {exc}") from exc
        dw, dv = step[:k], step[k:]
        norm_r = np.linalg.norm(r)
        s = 1.0
        in_domain_seen = False
        accepted = False
        while s >= MIN_STEP:
            w_try = w + s * dw
            if obj.in_domain(lp.embed(w_try), st.free):
                in_domain_seen = True
                v_try = v + s * dv
                r_try = kkt_residual(w_try, v_try)
                if np.linalg.norm(r_try) <= (1.0 - ARMIJO * s) * norm_r:
                    accepted = True
                    break
            s *= 0.5
        it += 1
        if not accepted:
            if not in_domain_seen:
                raise LocalSolverError(lp.center, "line search cannot stay inside the domain")
            break  # stalled at rounding level; report as not converged
        w, v, r = w_try, v_try, r_try
    th, et = _inf(r[:k]), _inf(r[k:])
    return LocalSolution(w, v, th, et, it, converged)


def local_kkt(lp: LocalProblem, row_vertices, w: np.ndarray | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
    """Saddle matrix at ``w`` and the graph vertex each of its indices sits on.

    Free variables sit on their own vertex; constraint row k sits on vertex k.
    """
    st = lp.structure
    if st.Q_free is not None:
        H = st.Q_free
    else:
        H = lp.objective.hessian_block(lp.embed(lp.start if w is None else w), st.free)
    vertices = np.concatenate([st.free, np.asarray(row_vertices)[st.rows]])
    return saddle_matrix(H, st.A_free), vertices


def decay_profile(kkt: np.ndarray, vertices: np.ndarray, graph) -> list[tuple[int, float]]:
    """Max |entry| of the inverse, bucketed by hop distance between index vertices."""
    try:
        inv = np.linalg.inv(kkt)
    except np.linalg.LinAlgError as exc:
        raise LocalSolverError(-1, f"singular KKT matrix: {exc}") from exc
    vertices = np.asarray(vertices, dtype=np.int64)
    uniq, inverse_idx = np.unique(vertices, return_inverse=True)
    table = graph.distance_table
    if table is not None:
        dist_u = table[np.ix_(uniq, uniq)]
    else:
        dist_u = np.stack([graph.bfs([int(u)])[uniq] for u in uniq])
    if np.any(dist_u == UNREACHED):
        raise LocalSolverError(-1, "KKT indices span disconnected vertices")
    dist = dist_u[np.ix_(inverse_idx, inverse_idx)]
    mag = np.abs(inv)
    out = []
    for s in range(int(dist.max()) + 1):
        sel = dist == s
        if sel.any():
            out.append((s, float(mag[sel].max())))
    return out


def decay_envelope(s: int, cond: float, norm: float, m: int) -> float:
    """Off-diagonal decay bound for an inverse at hop distance s (width <= 2m)."""
    scale = cond * cond / norm
    if s == 0:
        return scale
    r = 1.0 - 2.0 / (cond * cond + 1.0)
    return scale * math.exp((s / (4.0 * m) - 0.5) * math.log(r))
