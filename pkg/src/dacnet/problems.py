"""Local objectives, linear constraints and the constants behind the rate bound.

Every objective is a sum of per-vertex terms ``f_i`` that read only the
variables within ``m`` hops of ``i``. Besides values and gradients, objectives
provide the mean-value matrix ``J(x, y)`` with
``grad(x) - grad(y) == J(x, y) @ (x - y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from dacnet.graph import Graph, geodesic_width, laplacian
from dacnet.local_solver import independent_rows

MEAN_VALUE_EPS = 1e-12


class DomainError(ValueError):
    pass


class Objective:
    """Interface shared by all objectives. Subclasses fill in the math."""

    n: int
    m: int
    is_quadratic = False

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def local_value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.grad_rows(x, np.arange(self.n))

    def grad_rows(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x: np.ndarray) -> sp.csr_array:
        raise NotImplementedError

    def hessian_block(self, x: np.ndarray, idx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def j_matrix(self, x: np.ndarray, y: np.ndarray) -> sp.csr_array:
        raise NotImplementedError

    def in_domain(self, x: np.ndarray, idx: np.ndarray | None = None) -> bool:
        """Whether the terms touching ``idx`` (all terms if None) are defined at x."""
        return True


class QuadraticObjective(Objective):
    """F(x) = 1/2 x'Qx + c'x + const with f_i = 1/2 x_i (Qx)_i + c_i x_i."""

    is_quadratic = True

    def __init__(self, Q, c, const: float = 0.0, m: int = 1):
        self.Q = sp.csr_array(Q)
        self.c = np.asarray(c, dtype=float)
        self.const = float(const)
        self.n = self.Q.shape[0]
        self.m = m

    def value(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.c @ x + self.const)

    def local_value(self, i, x):
        row = self.Q[[i], :]
        qx = float(row.data @ x[row.indices])
        return 0.5 * x[i] * qx + self.c[i] * x[i] + self.const / self.n

    def grad_rows(self, x, idx):
        return self.Q[idx, :] @ x + self.c[idx]

    def hessian(self, x=None):
        return self.Q

    def hessian_block(self, x, idx):
        return self.Q[idx, :][:, idx].toarray()

    def j_matrix(self, x=None, y=None):
        return self.Q


class L2DistanceObjective(QuadraticObjective):
    """F(x) = 1/2 ||x - z||^2, split as f_i = sum_{j ~ i} (x_j - z_j)^2 / (2 d_j).

    Isolated vertices keep their own term so the split still sums to F.
    """

    def __init__(self, g: Graph, z):
        z = np.asarray(z, dtype=float)
        super().__init__(sp.identity(g.n, format="csr"), -z, 0.5 * float(z @ z), m=1)
        self.z = z
        self.graph = g
        self._deg = g.degrees()

    def value(self, x):
        r = x - self.z
        return 0.5 * float(r @ r)

    def local_value(self, i, x):
        nb = self.graph.adjacency[i]
        if nb.size == 0:
            return 0.5 * float((x[i] - self.z[i]) ** 2)
        r = x[nb] - self.z[nb]
        return float(np.sum(r * r / (2.0 * self._deg[nb])))


class EntropyObjective(Objective):
    """F(x) = sum_i x_i log x_i on the open positive orthant."""

    def __init__(self, n: int, m: int = 1):
        self.n = n
        self.m = m

    def _check(self, x):
        if np.any(x <= 0):
            raise DomainError("entropy is only defined for strictly positive x")

    def value(self, x):
        self._check(x)
        return float(np.sum(x * np.log(x)))

    def local_value(self, i, x):
        if x[i] <= 0:
            raise DomainError("entropy is only defined for strictly positive x")
        return float(x[i] * math.log(x[i]))

    def grad_rows(self, x, idx):
        xi = x[idx]
        self._check(xi)
        return np.log(xi) + 1.0

    def hessian(self, x):
        self._check(x)
        return sp.diags_array(1.0 / x, format="csr")

    def hessian_block(self, x, idx):
        xi = x[idx]
        self._check(xi)
        return np.diag(1.0 / xi)

    def j_matrix(self, x, y):
        self._check(x)
        self._check(y)
        return sp.diags_array(log_mean_value(x, y), format="csr")

    def in_domain(self, x, idx=None):
        xi = x if idx is None else x[idx]
        return bool(np.all(xi > 0))


def log_mean_value(x, y):
    """(log x - log y) / (x - y) coordinatewise, 1/x where x and y nearly coincide."""
    diff = x - y
    out = 1.0 / x
    far = np.abs(diff) >= MEAN_VALUE_EPS
    out[far] = (np.log(x[far]) - np.log(y[far])) / diff[far]
    return out


@dataclass
class LinearInequalities:
    """Affine constraints g_l(x) = (C x - d)_l <= 0, one per vertex l in ``U``."""

    C: sp.csr_array
    d: np.ndarray
    U: np.ndarray

    def values(self, x):
        return self.C @ x - self.d

    def rows_touching(self, idx) -> np.ndarray:
        cols = sp.csc_array(self.C)[:, idx]
        return np.unique(cols.indices[cols.data != 0])


@dataclass
class Constraints:
    """Equality constraints ``A x = b`` with rows labelled by vertices ``W``."""

    A: sp.csr_array
    b: np.ndarray
    W: np.ndarray
    inequalities: LinearInequalities | None = None

    @property
    def U(self) -> np.ndarray:
        if self.inequalities is None:
            return np.empty(0, dtype=np.int64)
        return self.inequalities.U


@dataclass
class ProblemInstance:
    objective: Objective
    constraints: Constraints
    kind: str
    graph: Graph | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        A, b = self.constraints.A, self.constraints.b
        if A.shape[1] != self.objective.n:
            raise ValueError("constraint matrix columns must match the dimension")
        if A.shape[0] != len(b) or A.shape[0] != len(self.constraints.W):
            raise ValueError("constraint rows, rhs and row labels disagree")

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def m(self) -> int:
        return self.objective.m


def restrict_rows(M, W) -> sp.csr_array:
    """chi_W M: keep the rows listed in W."""
    return sp.csr_array(sp.csr_array(M)[np.asarray(W, dtype=np.int64), :])


def make_l2_problem(g: Graph, W, z) -> ProblemInstance:
    W = np.sort(np.asarray(W, dtype=np.int64))
    A = restrict_rows(laplacian(g), W)
    cons = Constraints(A, np.zeros(len(W)), W)
    return ProblemInstance(L2DistanceObjective(g, z), cons, "l2", g)


def make_quadratic_problem(g: Graph, W, c) -> ProblemInstance:
    W = np.sort(np.asarray(W, dtype=np.int64))
    L = laplacian(g)
    eye = sp.identity(g.n, format="csr")
    Q = sp.csr_array(4.0 * eye + L)
    A = restrict_rows(L @ L + 2.0 * eye, W)
    cons = Constraints(A, np.zeros(len(W)), W)
    return ProblemInstance(QuadraticObjective(Q, c, m=1), cons, "quadratic", g)


def make_entropy_problem(g: Graph, W, b) -> ProblemInstance:
    W = np.sort(np.asarray(W, dtype=np.int64))
    b = np.asarray(b, dtype=float)
    if len(b) != len(W):
        raise ValueError("b must have one entry per row in W")
    eye = sp.identity(g.n, format="csr")
    A = restrict_rows(5.0 * laplacian(g) + eye, W)
    # x >= 0 written as g_l(x) = -x_l <= 0 for every vertex
    ineq = LinearInequalities(sp.csr_array(-eye), np.zeros(g.n), np.arange(g.n))
    cons = Constraints(A, b, W, ineq)
    return ProblemInstance(EntropyObjective(g.n, m=1), cons, "entropy", g)


def operator_norm(M, tol: float = 1e-10, max_iters: int = 10_000, seed: int = 0) -> float:
    """Largest singular value by power iteration on M'M."""
    M = sp.csr_array(M)
    if M.nnz == 0:
        return 0.0
    MT = M.T.tocsr()
    v = np.random.default_rng(seed).standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        w = MT @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = math.sqrt(nw)
        v = w / nw
        if abs(new - est) <= tol * new:
            return new
        est = new
    return est


def _extreme_eigs(M) -> tuple[float, float]:
    dense = M.toarray() if sp.issparse(M) else np.asarray(M)
    ev = np.linalg.eigvalsh(0.5 * (dense + dense.T))
    return float(ev[0]), float(ev[-1])


@dataclass
class ValidationReport:
    width_J: int
    width_A: int
    m: int
    c1: float
    L1: float
    c2: float
    c2_by_center: dict
    norm_A: float
    c1_L1_sampled: bool
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    c2_raw_by_center: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def sample_points(p: ProblemInstance, rng, box=(0.1, 10.0)) -> np.ndarray:
    """Random evaluation point inside the objective's domain."""
    if p.objective.is_quadratic:
        return rng.standard_normal(p.n)
    return rng.uniform(box[0], box[1], p.n)


def validate_assumptions(p: ProblemInstance, part, samples: int = 3, seed: int = 0,
                         box=(0.1, 10.0)) -> ValidationReport:
    """Check locality, spectral bounds and local stability; failures are collected."""
    g = p.graph if p.graph is not None else part.graph
    rng = np.random.default_rng(seed)
    A = p.constraints.A
    W = p.constraints.W
    failures, warnings = [], []

    width_A = geodesic_width(g, A, W, None)
    if width_A > 2 * p.m:
        failures.append(("width_A", width_A))

    width_J, c1, L1 = 0, math.inf, 0.0
    draws = 1 if p.objective.is_quadratic else samples
    for _ in range(draws):
        x, y = sample_points(p, rng, box), sample_points(p, rng, box)
        J = p.objective.j_matrix(x, y)
        wj = geodesic_width(g, J)
        if wj > 2 * p.m:
            failures.append(("width_J", wj, x, y))
        width_J = max(width_J, wj)
        lo, hi = _extreme_eigs(J)
        c1, L1 = min(c1, lo), max(L1, hi)
    if c1 <= 0:
        failures.append(("c1", c1))

    # Redundant local rows are reported, then removed before measuring the
    # stability constant that enters kappa.
    c2_by_center, c2_raw = {}, {}
    for lam in part.centers:
        rows = part.w_local[lam]
        if rows.size == 0:
            continue
        free = part.extended[lam]
        c2_raw[lam] = _smallest_singular(A[rows, :][:, free].toarray())
        kept, dropped = independent_rows(A, rows, free, W, g.bfs(part.regions[lam]))
        if dropped.size:
            warnings.append(("local_stability_raw", lam, [int(W[k]) for k in dropped]))
        block = A[kept, :][:, free].toarray()
        c2_by_center[lam] = _smallest_singular(block)
        if c2_by_center[lam] ** 2 <= 1e-14 * max(1.0, float(np.abs(block).max()) ** 2):
            failures.append(("local_stability", lam, c2_by_center[lam]))
    c2 = min(c2_by_center.values()) if c2_by_center else 0.0
    norm_A = operator_norm(A)
    return ValidationReport(width_J, width_A, p.m, c1, L1, c2, c2_by_center, norm_A,
                            not p.objective.is_quadratic, failures, warnings, c2_raw)


def _smallest_singular(block: np.ndarray) -> float:
    if block.size == 0:
        return 0.0
    return float(np.linalg.svd(block, compute_uv=False)[-1]) if block.shape[0] <= block.shape[1] else 0.0


def compute_kappa(c1: float, L1: float, c2: float, norm_A: float) -> float:
    """Condition constant of the local saddle systems."""
    if min(c1, L1) <= 0:
        raise ValueError("c1 and L1 must be positive")
    if c2 <= 0:
        return math.inf
    return ((c1 + norm_A) / c1) ** 2 * (L1 + norm_A) * max(1.0 / c1, L1 / c2**2)


def contraction_ratio(kappa: float) -> float:
    """(kappa^2 - 1) / (kappa^2 + 1), written to stay accurate for large kappa."""
    if math.isinf(kappa):
        return 1.0
    return 1.0 - 2.0 / (kappa * kappa + 1.0)


def log_delta_R(kappa: float, R: int, m: int, d: float, D1: float) -> float:
    """Natural log of the certified rate; finite whenever kappa is."""
    if not kappa > 1:
        raise ValueError("kappa must exceed 1")
    if math.isinf(kappa):
        return math.inf
    q = 2.0 / kappa / kappa if kappa > 1e150 else 2.0 / (kappa * kappa + 1.0)
    log_r = math.log1p(-q)
    # log|log r|, falling back to log q once q underflows
    log_abs = math.log(-log_r) if log_r < 0 else math.log(2.0) - 2.0 * math.log(kappa)
    return (
        math.log(D1)
        + math.lgamma(d + 1.0)
        - d * (log_abs - math.log(4 * m))
        + d * math.log(R + 2)
        + (R / (4 * m)) * log_r
    )


def compute_delta_R(kappa: float, R: int, m: int, d: float, D1: float) -> float:
    """Certified geometric rate for extension radius R (may well exceed 1).

    Uses |log| of the contraction ratio and Gamma(d + 1) in place of d!.
    """
    ld = log_delta_R(kappa, R, m, d, D1)
    return math.exp(ld) if ld < 700 else math.inf


def kappa_from_report(report: ValidationReport) -> float:
    return compute_kappa(report.c1, report.L1, report.c2, report.norm_A)
