"""
Solvers for the game-theoretic problem
======================================

Three ways to solve ``-Lp u = f`` on the unlabeled vertices with hard label
constraints, where ``Lp`` is the game-theoretic graph p-Laplacian of
:mod:`plaplearn.operators`:

- :func:`gradient_descent_solve` iterates ``u <- u + alpha (Lp u + f)``. For
  ``f = 0`` it runs two monotone iterations bracketing the solution: one
  started from the constant max label, one from the constant min label. The
  bracket width bounds the sup-norm error of their midpoint, which gives a
  guaranteed stopping rule. A regularized variant (``eps_reg > 0``) solves
  ``eps u - Lp u = 0`` instead and contracts at the linear rate
  ``1 - eps`` per iteration.
- :func:`newton_like_solve` freezes the min/max neighbor locations, boosts
  those two edge weights by ``1 + d_x (p-2)``, and solves the resulting
  (nonsymmetric) linear system; exact once the frozen locations are correct.
  Supports the same continuation ladder on p as the Newton solver.
- :func:`semi_implicit_solve` lags the nonlinear part on the right-hand side
  and solves one fixed symmetric positive definite 2-Laplacian system per
  iteration, so the matrix and its preconditioner are built once.

All solvers require a connected symmetric graph. Weights are divided by
their maximum when any exceeds 1 (Gaussian k-NN weights already lie in
(0, 1], so this is a no-op there); the scale is recorded in the report and
the returned field solves the problem on the normalized graph.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .graphs import is_connected
from .linalg import cg_solve, gmres_solve, make_preconditioner
from .newton import HomotopySchedule, default_ladder
from .operators import game_operator, game_scaled_residual, graph_infinity, graph_laplacian_2
from .reports import SolveReport, SolverError, StageReport

__all__ = [
    "GameConfig",
    "alpha_bound",
    "gradient_descent_solve",
    "bracket_update",
    "newton_like_solve",
    "semi_implicit_solve",
]


def alpha_bound(p, eps_reg=0.0, lam=1.0):
    """Largest provably safe gradient-descent step for weights <= 1.

    ``p / (2p - 3)`` for the plain iteration with ``lam = 1``, shrinking to
    ``p / ((2 + eps) p - 3)`` for the regularized one; ``p = inf`` gives the
    limits ``1/2`` and ``1/(2 + eps)``.
    """
    if p == np.inf:
        return 1.0 / (2.0 * lam + eps_reg)
    return p / (1.0 + 2.0 * lam * (p - 2.0) + eps_reg * p)


@dataclass
class GameConfig:
    """Tunables shared by the game solvers.

    ``alpha=None`` uses the largest safe step. ``theta=None`` uses the
    minimal heuristically stable choice ``max(1, 2/p + d_x (1 - 2/p))`` per
    vertex. ``include_zero`` selects the all-pairs min/max convention for
    the infinity-Laplacian (neighbor-only is the default).
    """

    p: float = 3.0
    lam: float = 1.0
    alpha: float = None
    eps_reg: float = 0.0
    tol: float = 1e-6
    theta: object = None
    max_iter: int = 500_000
    nl_max_iter: int = 30
    include_zero: bool = False
    preconditioner: str = None  # solver-specific default when None
    inner_tol: float = None
    inner_maxit: int = None
    seed: int = None

    def __post_init__(self):
        if self.p != np.inf and self.p < 2:
            raise ValueError("p must be >= 2 (or inf)")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.eps_reg < 0:
            raise ValueError("eps_reg must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        bound = alpha_bound(self.p, self.eps_reg, self.lam)
        if self.alpha is None:
            self.alpha = bound
        elif self.alpha > bound * (1 + 1e-12) or self.alpha <= 0:
            raise ValueError(
                f"alpha={self.alpha} violates the stability bound {bound}"
            )

    def resolved_inner_tol(self):
        if self.inner_tol is not None:
            return self.inner_tol
        return max(min(1e-10, 1e-2 * self.tol), 5e-16)


def _prepare(graph, labels, require_weights_le_1):
    if not graph.symmetric:
        raise ValueError("game solvers require a symmetric graph")
    if not is_connected(graph):
        raise ValueError("graph must be connected")
    labels.validate_for(graph.n)
    scale = 1.0
    wmax = graph.max_weight()
    if require_weights_le_1 and wmax > 1.0:
        scale = 1.0 / wmax
        graph = graph.scaled(scale)
    return graph, scale


def bracket_update(graph, u, labels, alpha, p, lam=1.0, include_zero=False):
    """One gradient-descent sweep ``u + alpha Lp u`` on the unlabeled set."""
    out = u.copy()
    unl = labels.unlabeled(graph.n)
    op = game_operator(graph, u, p, lam=lam, include_zero=include_zero)
    out[unl] = u[unl] + alpha * op[unl]
    return out


def gradient_descent_solve(graph, labels, cfg):
    """Gradient-descent solve with a bracket-based stopping guarantee.

    With zero source the two bracket iterations sandwich the solution, the
    upper one nonincreasing and the lower one nondecreasing; iteration stops
    once ``max |upper - lower| <= 2 tol``, and the returned midpoint is then
    within ``tol`` of the exact solution in sup norm.

    With a nonzero source the bracket initializations are unavailable, so a
    plain iteration stopped on the scaled residual is run instead and
    flagged in the report. With ``cfg.eps_reg > 0`` the regularized
    iteration is run from a single start and stopped when the geometric
    error bound ``(1 - eps)^k * gap0`` drops below ``tol``.

    Returns
    -------
    (u, SolveReport)
    """
    graph, scale = _prepare(graph, labels, require_weights_le_1=True)
    n = graph.n
    f = labels.source_or_zeros(n)
    t0 = time.perf_counter()
    report = SolveReport(
        method="gradient_descent", p=cfg.p, linear_solver="none", seed=cfg.seed,
        extra={
            "alpha": cfg.alpha, "eps_reg": cfg.eps_reg, "weight_scale": scale,
            "lam": cfg.lam, "bracket_mode": True,
        },
    )
    unl = labels.unlabeled(n)

    if cfg.eps_reg > 0.0:
        return _regularized_descent(graph, labels, cfg, f, report, t0)

    if np.any(f != 0.0):
        report.extra["bracket_mode"] = False
        return _plain_descent(graph, labels, cfg, f, report, t0)

    upper = labels.full_field(n, fill=labels.values.max())
    lower = labels.full_field(n, fill=labels.values.min())
    stage = StageReport(p=cfg.p)
    report.stages.append(stage)
    widths = []
    width = float(np.max(upper - lower))
    for it in range(cfg.max_iter):
        if width <= 2.0 * cfg.tol:
            break
        new_upper = bracket_update(graph, upper, labels, cfg.alpha, cfg.p, cfg.lam, cfg.include_zero)
        new_lower = bracket_update(graph, lower, labels, cfg.alpha, cfg.p, cfg.lam, cfg.include_zero)
        slack = 1e-12 * max(1.0, width)
        if np.any(new_upper > upper + slack) or np.any(new_lower < lower - slack):
            raise SolverError("bracket monotonicity violated", report=report)
        if np.any(new_lower > new_upper + slack):
            raise SolverError("bracket ordering violated", report=report)
        upper, lower = new_upper, new_lower
        width = float(np.max(upper - lower))
        widths.append(width)
        stage.iterations += 1
    else:
        report.extra["bracket_width_history"] = widths
        report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
        raise SolverError(
            f"bracket width {width} above 2*tol after {cfg.max_iter} iterations",
            report=report,
        )
    u = 0.5 * (upper + lower)
    report.extra["bracket_width_history"] = widths
    stage.residuals = [game_scaled_residual(graph, u, labels, cfg.p, cfg.lam, cfg.include_zero)]
    report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return u, report


def _plain_descent(graph, labels, cfg, f, report, t0):
    n = graph.n
    unl = labels.unlabeled(n)
    u = labels.full_field(n, fill=float(labels.values.mean()))
    stage = StageReport(p=cfg.p)
    report.stages.append(stage)
    for it in range(cfg.max_iter):
        res = game_scaled_residual(graph, u, labels, cfg.p, cfg.lam, cfg.include_zero)
        op = game_operator(graph, u, cfg.p, lam=cfg.lam, include_zero=cfg.include_zero)
        stage.iterations += 1
        stage.residuals.append(res)
        if res <= cfg.tol:
            report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            return u, report
        u[unl] += cfg.alpha * (op[unl] + f[unl])
    report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    raise SolverError("plain descent did not reach tol", report=report)


def _regularized_descent(graph, labels, cfg, f, report, t0):
    n = graph.n
    eps = cfg.eps_reg
    unl = labels.unlabeled(n)
    u = labels.full_field(n, fill=float(labels.values.mean()))
    stage = StageReport(p=cfg.p)
    report.stages.append(stage)

    op = game_operator(graph, u, cfg.p, lam=cfg.lam, include_zero=cfg.include_zero)
    step = cfg.alpha * (op[unl] - eps * u[unl] + f[unl])
    u[unl] += step
    stage.iterations += 1
    # ||u0 - fixed point|| <= ||u1 - u0|| / eps, then geometric decay.
    gap0 = float(np.max(np.abs(step))) / eps
    factor = 1.0 - eps
    bound = gap0 * factor
    while bound > cfg.tol:
        if stage.iterations >= cfg.max_iter:
            report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            raise SolverError("regularized descent exceeded max_iter", report=report)
        op = game_operator(graph, u, cfg.p, lam=cfg.lam, include_zero=cfg.include_zero)
        u[unl] += cfg.alpha * (op[unl] - eps * u[unl] + f[unl])
        stage.iterations += 1
        bound *= factor
    stage.residuals = [bound]
    report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return u, report


def _row_first_argminmax(graph, vals):
    """Positions (into the CSR data array) of the per-row min and max of
    ``vals``, breaking ties toward the lowest column index."""
    indptr = graph.W.indptr
    counts = np.diff(indptr)
    if np.any(counts == 0):
        raise ValueError("graph has an isolated vertex")
    mn = np.minimum.reduceat(vals, indptr[:-1])
    mx = np.maximum.reduceat(vals, indptr[:-1])

    def first_pos(target):
        mask = vals == np.repeat(target, counts)
        pos = np.flatnonzero(mask)
        _, first = np.unique(graph.rows[pos], return_index=True)
        return pos[first]

    return first_pos(mn), first_pos(mx), mn, mx


def _assemble_newton_like(graph, labels, u_full, p, lam, include_zero):
    """Linear system of the frozen min/max linearization.

    Rows are the unlabeled vertices of ``(D_beta - Beta) u = Beta_O g +
    d_x p f`` where ``beta_xy = w_xy (1 + lam d_x (p-2) [y = y+ or y = y-])``
    and y+/y- are the argmax/argmin of ``w_xy (u(x) - u(y))``.
    """
    w = graph.W.data
    vals = w * (u_full[graph.rows] - u_full[graph.cols])
    pos_min, pos_max, mn, mx = _row_first_argminmax(graph, vals)
    boost = np.zeros_like(w)
    d_rep = graph.degrees
    keep_max = np.ones(graph.n, dtype=bool)
    keep_min = np.ones(graph.n, dtype=bool)
    if include_zero:
        # A zero-weight pair wins the arg when all neighbor values are on
        # one side of zero; the boost then lands on no stored edge.
        keep_max = mx >= 0.0
        keep_min = mn <= 0.0
    boost[pos_max[keep_max]] += lam * d_rep[keep_max] * (p - 2.0)
    boost[pos_min[keep_min]] += lam * d_rep[keep_min] * (p - 2.0)
    beta = w * (1.0 + boost)

    B = graph.W.copy()
    B.data = beta
    dbeta = np.asarray(B.sum(axis=1)).ravel()
    unl = labels.unlabeled(graph.n)
    rows = B[unl]
    A_sys = sparse.csr_matrix(sparse.diags(dbeta[unl]) - rows[:, unl])
    f = labels.source_or_zeros(graph.n)
    rhs = rows[:, labels.indices] @ labels.values \
        + graph.degrees[unl] * p * f[unl]
    return A_sys, rhs, (pos_min, pos_max)


def newton_like_solve(graph, labels, cfg, schedule=None):
    """Newton-like solve of the game problem for finite p.

    Each outer iteration freezes the min/max neighbor locations (ties to the
    lowest vertex index), assembles the boosted-weight linear operator, and
    solves the nonsymmetric system with restarted GMRES. Iteration stops
    when the scaled game residual drops below ``cfg.tol``; the iterate is
    exact (to linear-solver accuracy) as soon as the frozen locations stop
    changing.

    ``schedule`` may be None (single stage at ``cfg.p``, warm started from
    the p = 2 solve), "auto" (default continuation ladder), or a
    :class:`HomotopySchedule` ending at ``cfg.p``.
    """
    if cfg.p == np.inf:
        raise ValueError(
            "newton_like_solve requires finite p (the boosted weights "
            "diverge); use gradient_descent_solve or semi_implicit_solve"
        )
    graph, scale = _prepare(graph, labels, require_weights_le_1=True)
    if schedule == "auto":
        schedule = default_ladder(cfg.p) if cfg.p >= 3 else None
    if isinstance(schedule, HomotopySchedule) and abs(schedule.ladder[-1] - cfg.p) > 1e-12:
        raise ValueError("schedule must end at cfg.p")

    t0 = time.perf_counter()
    precond = cfg.preconditioner or "jacobi"
    report = SolveReport(
        method="newton_like", p=cfg.p, linear_solver="gmres", seed=cfg.seed,
        extra={"weight_scale": scale, "lam": cfg.lam, "preconditioner": precond,
               "homotopy": schedule is not None},
    )
    unl = labels.unlabeled(graph.n)
    inner_tol = cfg.resolved_inner_tol()

    def run_stage(p, u, stage, tol):
        prev_pos = None
        while stage.iterations < cfg.nl_max_iter:
            A_sys, rhs, pos = _assemble_newton_like(
                graph, labels, u, p, cfg.lam, cfg.include_zero
            )
            M = make_preconditioner(precond, A_sys)
            z, lin = gmres_solve(
                A_sys, rhs, M=M, tol=inner_tol, maxit=cfg.inner_maxit, x0=u[unl]
            )
            if not lin.converged:
                raise SolverError(
                    f"GMRES failed at stage p={p} "
                    f"(relative residual {lin.relative_residual:.2e})",
                    report=report,
                )
            u = u.copy()
            u[unl] = z
            res = game_scaled_residual(graph, u, labels, p, cfg.lam, cfg.include_zero)
            stage.iterations += 1
            stage.residuals.append(res)
            if res <= tol:
                return u
            stabilized = prev_pos is not None and all(
                np.array_equal(a, b) for a, b in zip(pos, prev_pos)
            )
            if stabilized:
                # Locations are frozen correctly; the residual is at the
                # linear-solver floor and will not improve further.
                raise SolverError(
                    f"stage p={p}: residual floor {res:.3e} above tol={tol}",
                    report=report,
                )
            prev_pos = pos
        raise SolverError(
            f"stage p={p}: min/max locations kept oscillating", report=report
        )

    # Warm start: p = 2 makes the boost vanish, leaving one Laplace solve.
    warm = StageReport(p=2.0)
    report.stages.append(warm)
    u = labels.full_field(graph.n)
    u = run_stage(2.0, u, warm, tol=np.inf)

    ladder = schedule.ladder if schedule is not None else (float(cfg.p),)
    for p in ladder:
        stage = StageReport(p=p)
        report.stages.append(stage)
        u = run_stage(p, u, stage, tol=cfg.tol)
    report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return u, report


def _theta_vector(cfg, graph):
    p, lam = cfg.p, cfg.lam
    inv_p = 0.0 if p == np.inf else 1.0 / p
    eta = 2.0 * inv_p + lam * graph.degrees * (1.0 - 2.0 * inv_p)
    floor = np.maximum(1.0, eta)
    if cfg.theta is None:
        return floor
    theta = cfg.theta(graph, p) if callable(cfg.theta) else cfg.theta
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), (graph.n,)).copy()
    if np.any(theta < floor - 1e-12):
        raise ValueError("theta must be >= max(1, 2/p + d_x (1 - 2/p)) at every vertex")
    return theta


def semi_implicit_solve(graph, labels, cfg):
    """Semi-implicit solve: one fixed SPD 2-Laplacian system per iteration.

    The nonlinear part is lagged on the right-hand side:

        -L2 u_next = beta (2 gamma Linf u - L2 u) + (2 d_x / theta) f

    with ``beta = (theta p - 2)/(theta p)`` and
    ``gamma = lam d_x (p-2)/(theta p - 2)``; at ``p = inf`` the coefficients
    are taken in the limit ``1/p = 0``. The left-hand matrix is assembled
    and preconditioned once (incomplete Cholesky with drop tolerance 0.1 by
    default). Iteration stops on the scaled game residual; fifty consecutive
    non-decreasing residuals raise a divergence error.
    """
    graph, scale = _prepare(graph, labels, require_weights_le_1=True)
    n = graph.n
    p, lam = cfg.p, cfg.lam
    theta = _theta_vector(cfg, graph)
    inv_p = 0.0 if p == np.inf else 1.0 / p
    if p == np.inf:
        beta = np.ones(n)
        gamma = lam * graph.degrees / theta
    else:
        beta = (theta * p - 2.0) / (theta * p)
        gamma = lam * graph.degrees * (p - 2.0) / (theta * p - 2.0)

    t0 = time.perf_counter()
    precond = cfg.preconditioner or "ic"
    report = SolveReport(
        method="semi_implicit", p=p, linear_solver="cg", seed=cfg.seed,
        extra={"weight_scale": scale, "lam": cfg.lam, "preconditioner": precond,
               "theta_policy": "max(1,eta)" if cfg.theta is None else "custom"},
    )
    unl = labels.unlabeled(n)
    f = labels.source_or_zeros(n)

    W_uu = graph.W[unl][:, unl]
    L_uu = sparse.csr_matrix(sparse.diags(graph.degrees[unl]) - W_uu)
    W_uo = graph.W[unl][:, labels.indices]
    couple = W_uo @ labels.values
    M = make_preconditioner(precond, L_uu, drop_tol=0.1)
    inner_tol = cfg.resolved_inner_tol()

    u = labels.full_field(n, fill=float(labels.values.mean()))
    stage = StageReport(p=p)
    report.stages.append(stage)
    best = np.inf
    non_decrease = 0
    while stage.iterations < cfg.max_iter:
        l2 = graph_laplacian_2(graph, u)
        linf = graph_infinity(graph, u, include_zero=cfg.include_zero)
        rhs = beta[unl] * (2.0 * gamma[unl] * linf[unl] - l2[unl]) \
            + (2.0 * graph.degrees[unl] / theta[unl]) * f[unl] + couple
        z, lin = cg_solve(
            L_uu, rhs, M=M, tol=inner_tol, maxit=cfg.inner_maxit,
            x0=u[unl], check_symmetry=False,
        )
        if not lin.converged:
            raise SolverError("semi-implicit inner CG failed", report=report)
        u[unl] = z
        res = game_scaled_residual(graph, u, labels, p, lam, cfg.include_zero)
        stage.iterations += 1
        stage.residuals.append(res)
        if res <= cfg.tol:
            report.wall_time_ms = 1e3 * (time.perf_counter() - t0)
            return u, report
        if res >= best:
            non_decrease += 1
            if non_decrease >= 50:
                raise SolverError(
                    "semi-implicit residual stopped decreasing", report=report
                )
        else:
            best = res
            non_decrease = 0
    raise SolverError("semi-implicit exceeded max_iter", report=report)
