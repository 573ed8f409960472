"""The outer divide-and-conquer iteration with simulated center-to-center messaging."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dacnet.local_solver import (
    LocalSolverError,
    LocalStructure,
    assemble_from_mailbox,
    build_structure,
    solve_local_iterative,
    solve_local_newton,
    solve_local_quadratic,
)

EXACT_TOL = 1e-12
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_WINDOW = 5


class DacStepError(RuntimeError):
    def __init__(self, center: int, cause: Exception):
        super().__init__(f"local solve failed at center {center}: {cause}")
        self.center = center


def constant_schedule(eps: float) -> Callable[[int], float]:
    return lambda n: eps


def geometric_schedule(eps0: float, ratio: float) -> Callable[[int], float]:
    return lambda n: eps0 * ratio**n


@dataclass
class DacConfig:
    max_iters: int = 100
    stop_tol: float = 1e-12
    mode: str = "exact"               # "exact" or "inexact"
    epsilon: Callable[[int], float] | None = None
    parallel: bool = False
    R: int | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.mode not in ("exact", "inexact"):
            raise ValueError("mode must be 'exact' or 'inexact'")
        if self.mode == "inexact" and self.epsilon is None:
            raise ValueError("inexact mode needs an epsilon schedule")

    def local_tol(self, n: int) -> float:
        return EXACT_TOL if self.mode == "exact" else float(self.epsilon(n))


class LocalSolvers:
    """Per-center structures for one (problem, partition) pair, built once."""

    def __init__(self, p, part):
        if part.m != p.m:
            raise ValueError("partition was built for a different neighboring radius")
        self.p = p
        self.part = part
        self.structures: dict[int, LocalStructure] = {}
        for lam in part.centers:
            try:
                self.structures[lam] = build_structure(p, part, lam)
            except LocalSolverError as exc:
                raise DacStepError(lam, exc) from exc

    def solve_view(self, lam: int, view: np.ndarray, tol: float, exact: bool):
        """Solve center ``lam`` from its D_{lam,R,4m} values alone."""
        st = self.structures[lam]
        lp = assemble_from_mailbox(self.p, st, view)
        try:
            if self.p.objective.is_quadratic:
                sol = solve_local_quadratic(lp) if exact else solve_local_iterative(lp, tol)
            else:
                sol = solve_local_newton(lp, tol)
        except LocalSolverError as exc:
            raise DacStepError(lam, exc) from exc
        return sol

    def update_from_view(self, lam: int, view: np.ndarray, tol: float, exact: bool):
        """New values on D_lam plus the solution they came from."""
        sol = self.solve_view(lam, view, tol, exact)
        return sol.w[self.structures[lam].region_pos], sol


def _solve_all(solvers: LocalSolvers, views: dict, tol: float, exact: bool, parallel: bool):
    centers = solvers.part.centers
    job = lambda lam: solvers.update_from_view(lam, views[lam], tol, exact)  # noqa: E731
    if parallel and len(centers) > 1:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(job, centers))
    else:
        results = [job(lam) for lam in centers]
    return dict(zip(centers, results))


def dac_step(p, part, x: np.ndarray, tol_local: float = EXACT_TOL, exact: bool = True,
             parallel: bool = False, solvers: LocalSolvers | None = None):
    """One iteration from a global iterate: returns (x_next, max theta, max eta)."""
    solvers = solvers or LocalSolvers(p, part)
    x = np.asarray(x, dtype=float)
    views = {lam: x[solvers.structures[lam].nb4] for lam in part.centers}
    results = _solve_all(solvers, views, tol_local, exact, parallel)
    return _stitch(part, p.n, results)


def _stitch(part, n, results):
    x_next = np.empty(n)
    th = et = 0.0
    for lam in part.centers:
        vals, sol = results[lam]
        x_next[part.regions[lam]] = vals
        th, et = max(th, sol.theta_inf), max(et, sol.eta_inf)
    return x_next, th, et


@dataclass
class Message:
    sender: int
    receiver: int
    payload: np.ndarray     # vertex indices (the sender's region)
    values: np.ndarray


@dataclass
class DacState:
    """Global iterate plus what each center holds after the last exchange."""

    x: np.ndarray
    n: int
    mailbox: dict
    messages: list = field(default_factory=list)
    history: list = field(default_factory=list)


def initial_state(solvers: LocalSolvers, x0: np.ndarray) -> DacState:
    x0 = np.asarray(x0, dtype=float).copy()
    mailbox = {lam: x0[st.nb4].copy() for lam, st in solvers.structures.items()}
    return DacState(x0, 0, mailbox)


def exchange(solvers: LocalSolvers, state: DacState, updates: dict) -> None:
    """Each center sends its new region values to its out-neighbors.

    A receiver keeps only entries on its own D_{lam,R,4m}; its own region is
    written directly. Afterwards the mailbox must equal the iterate on
    D_{lam,R,4m}.
    """
    part = solvers.part
    messages = []
    for lam in part.centers:
        st = solvers.structures[lam]
        box = state.mailbox[lam]
        pos = np.searchsorted(st.nb4, part.regions[lam])
        box[pos] = updates[lam]
    for sender in part.centers:
        payload = part.regions[sender]
        vals = updates[sender]
        for receiver in part.out_neighbors[sender]:
            if receiver == sender:
                continue
            messages.append(Message(sender, receiver, payload, vals))
            st = solvers.structures[receiver]
            pos = np.searchsorted(st.nb4, payload)
            hit = (pos < st.nb4.size) & (st.nb4[np.minimum(pos, st.nb4.size - 1)] == payload)
            state.mailbox[receiver][pos[hit]] = vals[hit]
    state.messages = messages


def message_trace(state: DacState) -> list[tuple[int, int, tuple[int, ...]]]:
    return [(msg.sender, msg.receiver, tuple(int(i) for i in msg.payload))
            for msg in state.messages]


def mailbox_consistent(solvers: LocalSolvers, state: DacState) -> bool:
    return all(np.array_equal(state.mailbox[lam], state.x[st.nb4])
               for lam, st in solvers.structures.items())


def fit_rate(errors) -> float | None:
    """Geometric rate from a least-squares line through log(error).

    Only entries above 100 machine epsilons of the first error count; fewer
    than four such entries give None.
    """
    e = np.asarray(errors, dtype=float)
    if e.size == 0 or not e[0] > 0:
        return None
    floor = 100.0 * np.finfo(float).eps * e[0]
    keep = np.flatnonzero(e > floor)
    if keep.size < 4:
        return None
    slope = np.polyfit(keep.astype(float), np.log(e[keep]), 1)[0]
    return float(math.exp(slope))


@dataclass
class ConvergenceReport:
    errors_2: list
    errors_inf: list
    steps_inf: list
    theta_max: list
    eta_max: list
    fitted_rate: float | None
    delta_R_theoretical: float | None
    iterations_run: int
    converged: bool
    diverged: bool
    x: np.ndarray
    local_failures: int = 0
    state: DacState | None = None


def _diverging(series) -> bool:
    if len(series) <= DIVERGENCE_WINDOW:
        return False
    tail = series[-DIVERGENCE_WINDOW - 1:]
    rising = all(b > a for a, b in zip(tail, tail[1:]))
    return rising and tail[-1] > DIVERGENCE_FACTOR * tail[0]


def run(p, part, cfg: DacConfig, x0=None, oracle=None, delta_R: float | None = None,
        solvers: LocalSolvers | None = None, trace: Callable | None = None) -> ConvergenceReport:
    """Iterate until the l-infinity step drops below ``stop_tol`` or ``max_iters``.

    Every iteration runs all local solves from the centers' mailboxes, writes
    the disjoint region updates, then exchanges messages. ``trace`` (if given)
    is called as ``trace(n, state_before, updates, solvers)`` for inspection.
    """
    solvers = solvers or LocalSolvers(p, part)
    x0 = np.zeros(p.n) if x0 is None else np.asarray(x0, dtype=float)
    state = initial_state(solvers, x0)
    err2, errinf, steps, ths, ets = [], [], [], [math.nan], [math.nan]

    def record(x):
        if oracle is not None:
            diff = x - oracle
            err2.append(float(np.linalg.norm(diff)))
            errinf.append(float(np.max(np.abs(diff))))

    record(state.x)
    converged = diverged = False
    failures = 0
    watch = errinf if oracle is not None else steps
    if oracle is not None and errinf[0] == 0.0:
        converged = True
    while not converged and state.n < cfg.max_iters:
        tol = cfg.local_tol(state.n)
        views = {lam: box.copy() for lam, box in state.mailbox.items()}
        results = _solve_all(solvers, views, tol, cfg.mode == "exact", cfg.parallel)
        updates = {lam: results[lam][0] for lam in part.centers}
        failures += sum(not results[lam][1].converged for lam in part.centers)
        if trace is not None:
            trace(state.n, views, updates, solvers)
        x_next, th, et = _stitch(part, p.n, results)
        step = float(np.max(np.abs(x_next - state.x)))
        state.x = x_next
        state.n += 1
        exchange(solvers, state, updates)
        if not mailbox_consistent(solvers, state):
            raise AssertionError("mailbox does not match the iterate on D_{lam,R,4m}")
        steps.append(step)
        ths.append(th)
        ets.append(et)
        record(x_next)
        if step < cfg.stop_tol:
            converged = True
        elif _diverging(watch):
            diverged = True
            break
    rate = fit_rate(err2 if oracle is not None else steps)
    return ConvergenceReport(err2, errinf, steps, ths, ets, rate, delta_R, state.n, converged,
                             diverged, state.x, failures, state)
