"""
Discrete-to-continuum consistency experiments
=============================================

Numerically checks that the normalized graph operators on sampled point
clouds approximate their continuum differential-operator targets. Three
graph families are covered:

- ``eps_ball``: kernel weights at a fixed connectivity radius;
- ``knn_nonsym``: kernel weights at the per-vertex k-th-neighbor radius
  (directed);
- ``knn_sym``: kernel weights at the symmetrized per-pair radius
  ``max(r_k(x), r_k(y))``.

The headline phenomenon these experiments expose: on symmetrized k-NN
graphs the continuum limit picks up a drift term
``-(1/d) grad(log rho) . grad(u)`` from the radius symmetrization, and the
drift survives as p -> infinity, so even pure min+max (Lipschitz) label
propagation stays sensitive to the sampling density. On eps-ball graphs the
p -> infinity limit forgets the density.

Operator variants and their continuum targets (rho the sampling density,
normalized-kernel conventions):

=============  ===================  =====================================
family         variant              target
=============  ===================  =====================================
eps_ball       unnormalized         rho^-1 div(rho^2 grad u)
eps_ball       random_walk          rho^-2 div(rho^2 grad u)
eps_ball       infinity             Linf u
eps_ball       game_p               (1/p) rho^-2 div(rho^2 grad u)
                                    + (1-2/p) Linf u
knn_nonsym     as eps_ball          rho^(-2/d) times the eps_ball target
knn_sym        random_walk,         rho^-1 div(rho^(1-2/d) grad u)
               knn_unnormalized
knn_sym        infinity             rho^(-2/d) (Linf u
                                    - (1/d) grad(log rho) . grad u)
knn_sym        game_p               (1/p) rho^-1 div(rho^(1-2/d) grad u) +
                                    (1-2/p) rho^(-2/d) (Linf u - drift)
=============  ===================  =====================================

Here ``Linf u = (grad u)^T Hess(u) grad u / |grad u|^2``, undefined where
the gradient vanishes; such points are excluded from statistics.

Kernels are normalized internally to unit mass over the unit ball, which
makes every operator above invariant under scaling the kernel by a
constant.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.spatial import cKDTree

from .graphs import knn_radii

__all__ = [
    "Kernel",
    "gaussian_bump",
    "smooth_bump",
    "kernel_constants",
    "default_kernel",
    "ball_volume",
    "ContinuumProblem",
    "uniform_linear_problem",
    "uniform_quadratic_problem",
    "drift_exp_problem",
    "sample_density",
    "fill_distance",
    "discrete_operator",
    "continuum_operator",
    "default_eps_rule",
    "default_k_rule",
    "interior_margin",
    "consistency_experiment",
    "CSV_COLUMNS",
]

FAMILIES = ("eps_ball", "knn_nonsym", "knn_sym")
VARIANTS = ("unnormalized", "random_walk", "infinity", "game_p", "knn_unnormalized")


def ball_volume(d):
    """Volume of the unit ball in d dimensions."""
    from scipy.special import gamma
    return np.pi ** (d / 2.0) / gamma(d / 2.0 + 1.0)


def gaussian_bump(t):
    """Truncated Gaussian kernel ``exp(-4 t^2)`` on [0, 1], zero beyond."""
    t = np.asarray(t, dtype=np.float64)
    return np.where(t <= 1.0, np.exp(-4.0 * np.minimum(t, 1.0) ** 2), 0.0)


def smooth_bump(t):
    """C-infinity bump ``exp(1 - 1/(1 - t^2))`` on [0, 1), zero beyond."""
    t = np.asarray(t, dtype=np.float64)
    inside = t < 1.0
    tt = np.minimum(t, 1.0 - 1e-12)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - tt**2)), 0.0)


@dataclass
class Kernel:
    """Kernel with the precomputed constants the normalized operators need.

    ``sigma_eta`` is the second moment of the mass-normalized kernel in
    dimension d; ``r0`` maximizes ``r eta(r)`` on [0, 1]; ``theta_eta`` is
    the largest curvature constant for which ``r eta(r) + theta (r-r0)^2``
    stays below the maximum (positive exactly when the maximum is strict and
    quadratically so, which the min/max operator consistency needs).
    """

    eta: callable
    d: int
    mass: float
    sigma_eta: float
    r0: float
    r0_eta_r0: float
    theta_eta: float

    def eta_normalized(self, t):
        return np.asarray(self.eta(t), dtype=np.float64) / self.mass


def kernel_constants(eta, d, grid=10_000):
    """Validate a kernel and compute its normalization constants.

    The kernel must be nonincreasing on [0, 1] and vanish beyond 1. Raises
    when the strict-maximum constant ``theta_eta`` is nonpositive, since
    the min/max operators are then inconsistent.
    """
    ts = np.linspace(0.0, 1.0, grid)
    vals = np.asarray(eta(ts), dtype=np.float64)
    if np.any(vals < 0):
        raise ValueError("kernel must be nonnegative")
    if np.any(np.diff(vals) > 1e-12 * max(1.0, vals.max())):
        raise ValueError("kernel must be nonincreasing on [0, 1]")
    if np.any(np.asarray(eta(np.array([1.0 + 1e-9, 1.5, 10.0]))) != 0.0):
        raise ValueError("kernel must vanish beyond 1")

    surface = d * ball_volume(d)
    mass = surface * integrate.quad(lambda r: r ** (d - 1) * eta(r), 0.0, 1.0)[0]
    if mass <= 0:
        raise ValueError("kernel has zero mass")
    second = surface * integrate.quad(lambda r: r ** (d + 1) * eta(r), 0.0, 1.0)[0]
    sigma_eta = second / (d * mass)

    r_eta = lambda r: float(r * eta(r))
    res = optimize.minimize_scalar(lambda r: -r_eta(r), bounds=(0.0, 1.0), method="bounded",
                                   options={"xatol": 1e-12})
    r0 = float(res.x)
    # Polish against the grid in case of multiple local maxima.
    grid_best = ts[np.argmax(ts * vals)]
    if r_eta(grid_best) > r_eta(r0):
        res = optimize.minimize_scalar(
            lambda r: -r_eta(r),
            bounds=(max(0.0, grid_best - 1e-3), min(1.0, grid_best + 1e-3)),
            method="bounded", options={"xatol": 1e-12},
        )
        r0 = float(res.x)
    peak = r_eta(r0)
    if not (0.0 < r0 < 1.0) or peak <= 0:
        raise ValueError("r * eta(r) must attain a positive interior maximum")

    away = np.abs(ts - r0) > 1e-3
    theta = float(np.min((peak - ts[away] * vals[away]) / (ts[away] - r0) ** 2))
    if theta <= 0:
        raise ValueError(
            "kernel fails the strict-maximum condition (theta_eta <= 0); "
            "min/max operators would be inconsistent"
        )
    return Kernel(eta=eta, d=d, mass=mass, sigma_eta=sigma_eta,
                  r0=r0, r0_eta_r0=peak, theta_eta=theta)


def default_kernel(d):
    """Constants for the truncated Gaussian kernel in dimension d."""
    return kernel_constants(gaussian_bump, d)


@dataclass
class ContinuumProblem:
    """Sampling density and test function with analytic derivatives.

    The density lives on the unit cube [0, 1]^d with bounds
    ``beta <= rho <= 1/beta`` and unit integral (checked by tensor
    quadrature at construction). The test function must be smooth; its
    gradient and Hessian are supplied analytically.
    """

    d: int
    rho: callable
    grad_log_rho: callable
    u: callable
    grad_u: callable
    hess_u: callable
    beta: float
    name: str = "custom"

    def __post_init__(self):
        if not (0 < self.beta <= 1):
            raise ValueError("beta must lie in (0, 1]")
        npts = {1: 128, 2: 48, 3: 20}.get(self.d, 8)
        nodes, weights = np.polynomial.legendre.leggauss(npts)
        nodes = 0.5 * (nodes + 1.0)
        weights = 0.5 * weights
        grids = np.meshgrid(*([nodes] * self.d), indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        wts = np.ones(pts.shape[0])
        for axis in range(self.d):
            wts = wts * weights[
                np.unravel_index(np.arange(pts.shape[0]), (nodes.size,) * self.d)[axis]
            ]
        vals = self.rho(pts)
        total = float(wts @ vals)
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"density integrates to {total}, not 1")
        if vals.min() < self.beta - 1e-9 or vals.max() > 1.0 / self.beta + 1e-9:
            raise ValueError("density violates its stated bounds")


def uniform_linear_problem(d=2):
    """Uniform density with a linear test function (all targets vanish)."""
    e1 = np.zeros(d)
    e1[0] = 1.0
    return ContinuumProblem(
        d=d,
        rho=lambda x: np.ones(np.asarray(x).shape[0]),
        grad_log_rho=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        u=lambda x: np.asarray(x)[:, 0],
        grad_u=lambda x: np.broadcast_to(e1, np.asarray(x).shape).copy(),
        hess_u=lambda x: np.zeros((np.asarray(x).shape[0], d, d)),
        beta=1.0,
        name="uniform-linear",
    )


def uniform_quadratic_problem(d=2):
    """Uniform density with ``u = |x|^2 / 2`` (curvature targets)."""
    eye = np.eye(d)
    return ContinuumProblem(
        d=d,
        rho=lambda x: np.ones(np.asarray(x).shape[0]),
        grad_log_rho=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        u=lambda x: 0.5 * np.sum(np.asarray(x) ** 2, axis=1),
        grad_u=lambda x: np.asarray(x, dtype=np.float64).copy(),
        hess_u=lambda x: np.broadcast_to(eye, (np.asarray(x).shape[0], d, d)).copy(),
        beta=1.0,
        name="uniform-quadratic",
    )


def drift_exp_problem(d=2):
    """Exponential density ``rho ~ exp(x_1)`` with ``u = x_1``.

    The symmetrized k-NN operators see the pure drift target
    ``-(1/d) rho^(-2/d) grad(log rho) . grad u``; with d = 2 this is
    ``-1/(2 rho)`` while the eps-ball target is 0.
    """
    norm = (np.e - 1.0)
    e1 = np.zeros(d)
    e1[0] = 1.0

    def rho(x):
        return np.exp(np.asarray(x)[:, 0]) / norm

    def grad_log_rho(x):
        return np.broadcast_to(e1, np.asarray(x).shape).copy()

    return ContinuumProblem(
        d=d,
        rho=rho,
        grad_log_rho=grad_log_rho,
        u=lambda x: np.asarray(x)[:, 0],
        grad_u=lambda x: np.broadcast_to(e1, np.asarray(x).shape).copy(),
        hess_u=lambda x: np.zeros((np.asarray(x).shape[0], d, d)),
        beta=1.0 / norm,
        name="drift-exp",
    )


PRESETS = {
    "uniform-linear": uniform_linear_problem,
    "uniform-quadratic": uniform_quadratic_problem,
    "drift-exp": drift_exp_problem,
}


def sample_density(problem, n, seed):
    """Draw n i.i.d. samples from the problem density by rejection sampling.

    Proposals are uniform on the cube and accepted with probability
    ``rho(x) * beta`` (the envelope is the upper bound 1/beta), so the
    uniform case accepts every proposal. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n, problem.d))
    got = 0
    proposed = 0
    batch = max(1024, 2 * n)
    while got < n:
        x = rng.random((batch, problem.d))
        accept = rng.random(batch) <= problem.rho(x) * problem.beta
        proposed += batch
        take = min(n - got, int(accept.sum()))
        out[got : got + take] = x[accept][:take]
        got += take
        if proposed >= 100 * n and got < proposed / 100.0:
            raise RuntimeError("rejection sampling acceptance rate below 1%")
    return out


def fill_distance(points, resolution=64):
    """Largest distance from a probe grid on the unit cube to the sample."""
    d = points.shape[1]
    axes = [np.linspace(0.0, 1.0, resolution)] * d
    grid = np.meshgrid(*axes, indexing="ij")
    probes = np.column_stack([g.ravel() for g in grid])
    dist, _ = cKDTree(points).query(probes, k=1)
    return float(dist.max())


def default_eps_rule(n, d, c=1.0):
    """Radius schedule ``c (log n / n)^(1/(d+4))`` balancing bias and noise."""
    return c * (np.log(n) / n) ** (1.0 / (d + 4))


def default_k_rule(n, d, c=0.25):
    """Neighbor-count schedule ``ceil(c 2^d log^2 n)``."""
    return max(2, int(np.ceil(c * 2.0**d * np.log(n) ** 2)))


def interior_margin(family, scale, n, d, beta, factor=3.0):
    """Distance-to-boundary cutoff inside which vertices are evaluated."""
    if family == "eps_ball":
        return float(np.max(scale))
    k = float(scale)
    return factor * (k / (n * ball_volume(d) * beta)) ** (1.0 / d)


def _interior_mask(points, margin):
    dist = np.minimum(points.min(axis=1), (1.0 - points).min(axis=1))
    return dist > margin


def _pair_arrays(query_points, tree, all_points, radii):
    """Directed closed-ball pairs (x -> y, |x-y| <= r(x)), self included.

    Membership is decided with direct-form distances so the boundary case
    (a point's own k-th neighbor) does not depend on tree arithmetic.
    """
    lists = tree.query_ball_point(query_points, r=np.asarray(radii) * (1.0 + 1e-9))
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    rows = np.repeat(np.arange(query_points.shape[0]), counts)
    cols = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists]) \
        if counts.sum() else np.empty(0, dtype=np.int64)
    dist = np.sqrt(((query_points[rows] - all_points[cols]) ** 2).sum(axis=1))
    keep = dist <= np.broadcast_to(radii, (query_points.shape[0],))[rows]
    return rows[keep], cols[keep], dist[keep]


def _check_nonempty(rows_local, cols, at):
    others = np.bincount(rows_local[cols != at[rows_local]], minlength=at.size)
    if np.any(others == 0):
        bad = at[int(np.argmin(others))]
        raise ValueError(f"vertex {bad} has an empty neighborhood at this scale")


def _row_reduce(rows_local, vals, n_rows):
    sums = np.bincount(rows_local, weights=vals, minlength=n_rows)
    order = np.argsort(rows_local, kind="stable")
    sorted_vals = vals[order]
    boundaries = np.searchsorted(rows_local[order], np.arange(n_rows))
    mn = np.minimum.reduceat(sorted_vals, boundaries)
    mx = np.maximum.reduceat(sorted_vals, boundaries)
    return sums, mn, mx


def discrete_operator(points, u_values, family, variant, scale, p, kernel, at=None,
                      radii=None):
    """Evaluate a normalized graph operator at the requested vertices.

    Parameters
    ----------
    points : (n, d) array
    u_values : (n,) array
        Test-function values at the points.
    family : str
        ``eps_ball | knn_nonsym | knn_sym``.
    variant : str
        ``unnormalized | random_walk | infinity | game_p`` (eps_ball and
        knn_nonsym), plus ``knn_unnormalized`` (knn_sym only).
    scale : float, int or array
        Radius for ``eps_ball`` (scalar or one radius per evaluated vertex);
        neighbor count k for the k-NN families.
    p : float
        Exponent for ``game_p``; ``inf`` allowed.
    kernel : Kernel
    at : int array, optional
        Vertex ids to evaluate (default: all). Degrees and min/max include
        the vertex itself, so the min/max parts are clamped at zero exactly
        as summing over every sample point would give.
    radii : array, optional
        Precomputed k-th-neighbor distances (k-NN families only), to avoid
        recomputing them across variants.

    Returns
    -------
    values : array aligned with ``at``
    """
    points = np.asarray(points, dtype=np.float64)
    u_values = np.asarray(u_values, dtype=np.float64)
    n, d = points.shape
    if kernel.d != d:
        raise ValueError("kernel constants were computed for a different dimension")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "unnormalized" and family != "eps_ball":
        raise ValueError("unnormalized is an eps_ball variant")
    if variant == "knn_unnormalized" and family != "knn_sym":
        raise ValueError("knn_unnormalized is a knn_sym variant")
    at = np.arange(n) if at is None else np.asarray(at, dtype=np.int64)
    tree = cKDTree(points)
    eta = kernel.eta_normalized

    if family == "eps_ball":
        eps = np.broadcast_to(np.asarray(scale, dtype=np.float64), at.shape)
        rows_local, cols, dist = _pair_arrays(points[at], tree, points, eps)
        w = eta(dist / eps[rows_local])
        diff = u_values[cols] - u_values[at][rows_local]
        _check_nonempty(rows_local, cols, at)
        sums, mn, mx = _row_reduce(rows_local, w * diff, at.size)
        deg = np.bincount(rows_local, weights=w, minlength=at.size)
        unn = 2.0 / (kernel.sigma_eta * n * eps ** (d + 2)) * sums
        rw = 2.0 / (kernel.sigma_eta * eps**2 * deg) * sums
        inf_norm = kernel.r0 * kernel.r0_eta_r0 / kernel.mass
        linf = (mn + mx) / (inf_norm * eps**2)
    else:
        k = int(scale)
        if radii is None:
            radii = knn_radii(points, k)
        if family == "knn_nonsym":
            rows_local, cols, dist = _pair_arrays(points[at], tree, points, radii[at])
            w = eta(dist / radii[at][rows_local])
        else:
            rows_all, cols_all, _ = _pair_arrays(points, tree, points, radii)
            # Union with the reversed pairs: |x-y| <= max(r(x), r(y)).
            code = np.unique(
                np.concatenate([rows_all * n + cols_all, cols_all * n + rows_all])
            )
            rows_g, cols_g = code // n, code % n
            keep = np.isin(rows_g, at)
            rows_g, cols = rows_g[keep], cols_g[keep]
            remap = np.full(n, -1, dtype=np.int64)
            remap[at] = np.arange(at.size)
            rows_local = remap[rows_g]
            dist = np.sqrt(((points[rows_g] - points[cols]) ** 2).sum(axis=1))
            w = eta(dist / np.maximum(radii[rows_g], radii[cols]))
        diff = u_values[cols] - u_values[at][rows_local]
        _check_nonempty(rows_local, cols, at)
        sums, mn, mx = _row_reduce(rows_local, w * diff, at.size)
        deg = np.bincount(rows_local, weights=w, minlength=at.size)
        pref = (n * ball_volume(d) / k) ** (2.0 / d)
        rw = 2.0 / (kernel.sigma_eta * deg) * pref * sums
        inf_norm = kernel.r0 * kernel.r0_eta_r0 / kernel.mass
        linf = pref / inf_norm * (mn + mx)
        unn = 2.0 / (kernel.sigma_eta * n) * (n * ball_volume(d) / k) ** (1.0 + 2.0 / d) * sums

    if variant == "unnormalized" or variant == "knn_unnormalized":
        return unn
    if variant == "random_walk":
        return rw
    if variant == "infinity":
        return linf
    inv_p = 0.0 if p == np.inf else 1.0 / p
    return inv_p * rw + (1.0 - 2.0 * inv_p) * linf


def continuum_operator(problem, x, p, family, variant="game_p"):
    """Analytic continuum target at points ``x`` (see the module table).

    Returns (values, valid); entries whose target needs the gradient to be
    nonzero (any variant with a min/max part) are flagged invalid where
    ``|grad u| < 1e-8``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = problem.d
    rho = problem.rho(x)
    glog = problem.grad_log_rho(x)
    gu = problem.grad_u(x)
    hu = problem.hess_u(x)
    lap = np.trace(hu, axis1=1, axis2=2)
    gnorm2 = np.sum(gu**2, axis=1)
    valid = np.ones(x.shape[0], dtype=bool)

    def linf_term():
        nonlocal valid
        good = gnorm2 >= 1e-16
        valid = valid & good
        quad = np.einsum("ni,nij,nj->n", gu, hu, gu)
        return np.where(good, quad / np.where(good, gnorm2, 1.0), np.nan)

    dot = np.sum(glog * gu, axis=1)
    if family in ("eps_ball", "knn_nonsym"):
        div_part = lap + 2.0 * dot  # rho^-2 div(rho^2 grad u)
        if variant == "unnormalized":
            vals = rho * div_part
        elif variant == "random_walk":
            vals = div_part
        elif variant == "infinity":
            vals = linf_term()
        else:
            inv_p = 0.0 if p == np.inf else 1.0 / p
            vals = inv_p * div_part + (1.0 - 2.0 * inv_p) * linf_term()
        if family == "knn_nonsym":
            vals = rho ** (-2.0 / d) * vals
        return vals, valid

    # knn_sym: symmetrization adds the density drift.
    div_part = rho ** (-2.0 / d) * (lap + (1.0 - 2.0 / d) * dot)
    drift_part = rho ** (-2.0 / d) * (-dot / d)
    if variant in ("random_walk", "knn_unnormalized"):
        return div_part, valid
    if variant == "infinity":
        return rho ** (-2.0 / d) * linf_term() + drift_part, valid
    inv_p = 0.0 if p == np.inf else 1.0 / p
    vals = inv_p * div_part + (1.0 - 2.0 * inv_p) * (
        rho ** (-2.0 / d) * linf_term() + drift_part
    )
    return vals, valid


CSV_COLUMNS = (
    "family", "variant", "p", "n", "scale", "seed",
    "interior_count", "err_median", "err_max", "target_median",
)


def consistency_experiment(problem, family, p, n_list, seeds, scale_rule=None,
                           variant="game_p", kernel=None, margin_factor=3.0,
                           eps_c=1.0, k_c=0.25):
    """Sample, evaluate discrete vs continuum operators, tabulate errors.

    For every (n, seed) pair: draw a cloud from the problem density,
    evaluate the chosen discrete operator and its analytic target at the
    interior vertices, and record the median and max absolute error plus the
    median target. Points where the target is undefined (vanishing
    gradient) are excluded.

    ``scale_rule`` maps n to the radius (eps_ball) or the neighbor count
    (k-NN families); the defaults are :func:`default_eps_rule` with
    constant ``eps_c`` and :func:`default_k_rule` with constant ``k_c``.

    Returns
    -------
    list of dicts with keys :data:`CSV_COLUMNS`.
    """
    kernel = kernel if kernel is not None else default_kernel(problem.d)
    if scale_rule is None:
        if family == "eps_ball":
            scale_rule = lambda n: default_eps_rule(n, problem.d, c=eps_c)
        else:
            scale_rule = lambda n: default_k_rule(n, problem.d, c=k_c)
    records = []
    for n in n_list:
        scale = scale_rule(n)
        margin = interior_margin(family, scale, n, problem.d, problem.beta,
                                 factor=margin_factor)
        for seed in seeds:
            pts = sample_density(problem, n, seed)
            interior = np.flatnonzero(_interior_mask(pts, margin))
            if interior.size == 0:
                raise RuntimeError(
                    f"no interior vertices at n={n} (margin {margin:.3f}); "
                    "adjust the scale rule constants"
                )
            uvals = problem.u(pts)
            disc = discrete_operator(pts, uvals, family, variant, scale, p,
                                     kernel, at=interior)
            target, valid = continuum_operator(problem, pts[interior], p,
                                               family, variant)
            disc, target = disc[valid], target[valid]
            err = np.abs(disc - target)
            records.append({
                "family": family, "variant": variant,
                "p": float(p), "n": int(n),
                "scale": float(np.max(scale)), "seed": int(seed),
                "interior_count": int(valid.sum()),
                "err_median": float(np.median(err)),
                "err_max": float(err.max()),
                "target_median": float(np.median(target)),
            })
    return records
