"""
Newton solver for the variational problem
=========================================

Minimizes the p-energy subject to hard label constraints by Newton's method,
optionally with a continuation ladder on p ("homotopy"): solve for an
increasing sequence of exponents, warm-starting each stage from the previous
stage's solution. The p = 2 problem is linear and serves as the warm start
for the first stage.

With the field split into unlabeled values ``u`` and label values ``g``, the
energy gradient and Hessian are

    grad = L(u) u - B(u) g + f,      hess = (p - 1) L(u),

where ``L(u) = D(u) - A(u)`` is the graph Laplacian of the u-dependent
coefficients ``a_ij = w_ij |u_i - u_j|^(p-2)`` (unlabeled-unlabeled block)
and ``b_ij = w_ij |u_i - g_j|^(p-2)`` (unlabeled-labeled block), and
``d_i`` is the joint row sum. The Newton update is

    u+ = (p-2)/(p-1) u + 1/(p-1) L(u)^{-1} [B(u) g - f].

``L(u)`` is symmetric positive semidefinite, and positive definite whenever
the a-coefficient graph is connected and some b-coefficient is positive; a
tiny diagonal shift is retried once if the inner solve fails on a degenerate
(locally constant) iterate.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .graphs import is_connected
from .linalg import cg_solve, make_preconditioner
from .operators import variational_scaled_residual
from .reports import SolveReport, SolverError, StageReport

__all__ = [
    "NewtonConfig",
    "HomotopySchedule",
    "default_ladder",
    "assemble_newton_system",
    "newton_step",
    "solve_p2",
    "solve_variational",
]

# Ladder used throughout the experiments; extended geometrically past 50.
BASE_LADDER = (3.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0)


@dataclass
class NewtonConfig:
    """Tunables for the Newton solver.

    ``dim`` is the ambient dimension used by the residual scaling; it
    defaults to the feature dimension recorded on the graph builder side and
    must be supplied here. ``inner_tol=None`` scales the linear-solve
    tolerance with ``tol`` (never looser than 1e-10) so that tight outer
    tolerances remain reachable.
    """

    tol: float = 1e-10
    dim: int = None
    max_outer: int = 30
    inner_tol: float = None
    inner_maxit: int = None
    preconditioner: str = "jacobi"
    seed: int = None

    def resolved_inner_tol(self):
        if self.inner_tol is not None:
            return self.inner_tol
        return max(min(1e-10, 1e-2 * self.tol), 5e-16)


@dataclass
class HomotopySchedule:
    """Strictly increasing ladder of exponents, first entry >= 3."""

    ladder: tuple
    stage_tol: float = None

    def __post_init__(self):
        ladder = tuple(float(p) for p in self.ladder)
        if not ladder:
            raise ValueError("empty ladder")
        if ladder[0] < 3:
            raise ValueError("ladder must start at p >= 3 (p = 2 is the warm start)")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("ladder must be strictly increasing")
        self.ladder = ladder


def default_ladder(p_target):
    """Base ladder truncated (or geometrically extended, ratio 1.25) to end
    exactly at ``p_target``."""
    p_target = float(p_target)
    if p_target < 3:
        raise ValueError("homotopy needs p_target >= 3; solve directly below that")
    ladder = [p for p in BASE_LADDER if p < p_target]
    nxt = BASE_LADDER[-1] * 1.25
    while nxt < p_target:
        ladder.append(nxt)
        nxt *= 1.25
    ladder.append(p_target)
    return HomotopySchedule(tuple(ladder))


class NewtonSystem:
    """Assembled Newton linearization at a given field.

    Attributes
    ----------
    L : csr matrix
        Unlabeled-unlabeled Laplacian ``D - A`` of the current coefficients.
    rhs : array
        ``B g - f`` on the unlabeled vertices.
    grad : array
        Energy gradient ``L u - rhs`` on the unlabeled vertices.
    unlabeled : array
        Ascending unlabeled vertex ids (fixes the system ordering).
    """

    def __init__(self, L, rhs, grad, unlabeled):
        self.L = L
        self.rhs = rhs
        self.grad = grad
        self.unlabeled = unlabeled


def assemble_newton_system(graph, u, labels, p):
    """Assemble the Newton system at unlabeled values ``u``.

    ``u`` is indexed by the ascending unlabeled vertex ids.
    """
    labels.validate_for(graph.n)
    unl = labels.unlabeled(graph.n)
    if unl.size == 0:
        raise ValueError("no unlabeled vertices to solve for")
    val = np.empty(graph.n)
    val[unl] = u
    val[labels.indices] = labels.values

    K = graph.W.copy()
    diff = val[graph.cols] - val[graph.rows]
    if p == 2:
        coeff = graph.W.data
    else:
        coeff = graph.W.data * np.abs(diff) ** (p - 2)
    K.data = coeff
    d = np.asarray(K.sum(axis=1)).ravel()

    K_unl = K[unl]
    A = K_unl[:, unl]
    B = K_unl[:, labels.indices]
    L = sparse.diags(d[unl]) - A
    L = sparse.csr_matrix(L)
    f = labels.source_or_zeros(graph.n)[unl]
    rhs = B @ labels.values - f
    grad = L @ u - rhs
    return NewtonSystem(L, rhs, grad, unl)


def newton_step(system, u, p, inner_tol=1e-12, inner_maxit=None, preconditioner="jacobi"):
    """One Newton update from the assembled system.

    Retries once with a small diagonal shift when the inner solve fails
    (degenerate coefficients), then raises :class:`SolverError`.

    Returns
    -------
    (u_next, LinearSolveReport)
    """
    M = make_preconditioner(preconditioner, system.L)
    z, rep = cg_solve(
        system.L, system.rhs, M=M, tol=inner_tol, maxit=inner_maxit,
        check_symmetry=False,
    )
    if not rep.converged:
        mu = 1e-10 * system.L.diagonal().max()
        Lreg = system.L + mu * sparse.eye(system.L.shape[0], format="csr")
        z, rep = cg_solve(
            Lreg, system.rhs, M=make_preconditioner(preconditioner, Lreg),
            tol=inner_tol, maxit=inner_maxit, check_symmetry=False,
        )
        if not rep.converged:
            raise SolverError("Newton inner solve failed even with diagonal shift")
    if p == 2:
        return z, rep
    u_next = ((p - 2.0) * u + z) / (p - 1.0)
    return u_next, rep


def solve_p2(graph, labels, cfg=None):
    """Exact solution of the linear p = 2 problem (one SPD solve)."""
    cfg = cfg or NewtonConfig()
    labels.validate_for(graph.n)
    unl = labels.unlabeled(graph.n)
    system = assemble_newton_system(graph, np.zeros(unl.size), labels, 2.0)
    u, _ = newton_step(
        system, np.zeros(unl.size), 2.0,
        inner_tol=cfg.resolved_inner_tol(),
        inner_maxit=cfg.inner_maxit,
        preconditioner=cfg.preconditioner,
    )
    full = np.empty(graph.n)
    full[unl] = u
    full[labels.indices] = labels.values
    return full


def solve_variational(graph, labels, p_target, schedule="auto", cfg=None):
    """Solve the constrained p-energy minimization for ``p_target > 2``.

    Parameters
    ----------
    graph : WeightedGraph
        Must be connected and symmetric.
    labels : LabelSet
    p_target : float
        Target exponent, > 2.
    schedule : "auto" | None | HomotopySchedule
        "auto" builds :func:`default_ladder`; None runs a single Newton
        stage at ``p_target`` starting from the p = 2 solution.
    cfg : NewtonConfig

    Returns
    -------
    (u, SolveReport)
        Full-length field with labels inserted, and the solve report. The
        reported residuals are the scaled residuals, one per iteration.
    """
    cfg = cfg or NewtonConfig()
    dim = cfg.dim if cfg.dim is not None else graph.dim
    if dim is None:
        raise ValueError(
            "ambient dimension unknown: set NewtonConfig.dim or build the "
            "graph from a point cloud"
        )
    if p_target <= 2:
        raise ValueError("p_target must exceed 2")
    if not graph.symmetric:
        raise ValueError("variational solver requires a symmetric graph")
    if not is_connected(graph):
        raise ValueError("graph must be connected")
    labels.validate_for(graph.n)

    if schedule == "auto":
        schedule = default_ladder(p_target) if p_target >= 3 else None
    if schedule is not None and abs(schedule.ladder[-1] - p_target) > 1e-12:
        raise ValueError("schedule must end at p_target")
    ladder = schedule.ladder if schedule is not None else (float(p_target),)
    stage_tol = (schedule.stage_tol if schedule is not None else None) or cfg.tol

    t0 = time.perf_counter()
    report = SolveReport(
        method="newton", p=float(p_target), linear_solver="cg", seed=cfg.seed,
        extra={"preconditioner": cfg.preconditioner, "homotopy": schedule is not None,
               "residual_scaling_dim": dim},
    )

    unl = labels.unlabeled(graph.n)
    full = solve_p2(graph, labels, cfg)
    u = full[unl]
    inner_tol = cfg.resolved_inner_tol()

    for p in ladder:
        stage = StageReport(p=p)
        report.stages.append(stage)
        tol = cfg.tol if p == ladder[-1] else stage_tol
        prev_res = np.inf
        while stage.iterations < cfg.max_outer:
            system = assemble_newton_system(graph, u, labels, p)
            u_next, _ = newton_step(
                system, u, p, inner_tol=inner_tol,
                inner_maxit=cfg.inner_maxit, preconditioner=cfg.preconditioner,
            )
            full[unl] = u_next
            res = variational_scaled_residual(graph, full, labels, p, dim)
            if not np.isfinite(res) or res > max(1e6 * prev_res, 1e6):
                # One-time halved step before giving up on this stage.
                u_next = 0.5 * (u + u_next)
                full[unl] = u_next
                res = variational_scaled_residual(graph, full, labels, p, dim)
                if not np.isfinite(res):
                    report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
                    raise SolverError(
                        f"Newton diverged at stage p={p}", report=report
                    )
            u = u_next
            stage.iterations += 1
            stage.residuals.append(res)
            prev_res = res
            if res < tol:
                break
        else:
            report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            raise SolverError(
                f"stage p={p} did not reach tol={tol} in {cfg.max_outer} iterations",
                report=report,
            )

    report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    full[unl] = u
    return full, report
