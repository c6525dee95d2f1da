"""
One-vs-rest semi-supervised classification
==========================================

Reduces an M-class problem to M binary label-propagation solves on a shared
graph: for class c the labeled vertices of class c get value 1, the other
labeled vertices 0, and the chosen solver extends the labels to the whole
graph. The M solution fields form the score matrix; predictions are the
argmax over classes (lowest class id on ties). With zero source and the
{1, 0} encoding the maximum principle keeps every score in [0, 1].

Solvers: ``laplace`` (the linear p = 2 problem), ``newton`` (variational),
``gradient_descent``, ``newton_like`` and ``semi_implicit`` (game-theoretic).
"""

from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .game import GameConfig, gradient_descent_solve, newton_like_solve, semi_implicit_solve
from .graphs import is_connected
from .newton import NewtonConfig, solve_p2, solve_variational
from .operators import LabelSet
from .reports import SolverError

__all__ = ["MulticlassLabels", "one_vs_rest", "predictions", "accuracy"]

SOLVER_CHOICES = ("laplace", "newton", "gradient_descent", "newton_like", "semi_implicit")


@dataclass
class MulticlassLabels:
    """Labeled vertex ids with integer class ids in [0, num_classes)."""

    indices: np.ndarray
    classes: np.ndarray
    num_classes: int = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        cls = np.asarray(self.classes, dtype=np.int64).ravel()
        if idx.size != cls.size:
            raise ValueError("indices and classes must have equal length")
        if idx.size == 0:
            raise ValueError("need at least one labeled vertex")
        order = np.argsort(idx)
        idx, cls = idx[order], cls[order]
        if np.any(np.diff(idx) == 0):
            raise ValueError("duplicate labeled vertices")
        if self.num_classes is None:
            self.num_classes = int(cls.max()) + 1
        if cls.min() < 0 or cls.max() >= self.num_classes:
            raise ValueError("class ids out of range")
        present = np.unique(cls)
        if present.size != self.num_classes:
            raise ValueError("every class must have at least one labeled vertex")
        self.indices, self.classes = idx, cls


def _binary_solve(graph, labels, p, method, cfg):
    if method == "laplace":
        return solve_p2(graph, labels, cfg if isinstance(cfg, NewtonConfig) else None)
    if method == "newton":
        u, _ = solve_variational(graph, labels, p, schedule="auto", cfg=cfg)
        return u
    if method == "gradient_descent":
        u, _ = gradient_descent_solve(graph, labels, cfg)
        return u
    if method == "newton_like":
        u, _ = newton_like_solve(graph, labels, cfg, schedule="auto")
        return u
    if method == "semi_implicit":
        u, _ = semi_implicit_solve(graph, labels, cfg)
        return u
    raise ValueError(f"unknown method {method!r}; choose from {SOLVER_CHOICES}")


def one_vs_rest(graph, labels, p, method, cfg=None, encoding=(1.0, 0.0), n_jobs=1):
    """Solve the M binary class-vs-rest problems and return the score matrix.

    Parameters
    ----------
    graph : WeightedGraph
        Connected symmetric graph shared by all binary solves.
    labels : MulticlassLabels
    p : float
        Exponent handed to the solver (ignored by ``laplace``).
    method : str
        One of ``laplace | newton | gradient_descent | newton_like |
        semi_implicit``.
    cfg : NewtonConfig or GameConfig, optional
        Must match the method family; a default is built when omitted.
    encoding : (float, float)
        Values assigned to the positive / rest labeled vertices. The default
        {1, 0} keeps scores inside [0, 1] by the maximum principle.
    n_jobs : int
        Class solves are independent; joblib runs them in parallel when
        n_jobs > 1 with results merged in class order.

    Returns
    -------
    (n, M) array of scores, one column per class.
    """
    if not is_connected(graph):
        raise ValueError("graph must be connected")
    cfg = _default_cfg(method, p, graph) if cfg is None else cfg
    pos, neg = float(encoding[0]), float(encoding[1])

    def solve_class(c):
        g = np.where(labels.classes == c, pos, neg)
        ls = LabelSet(labels.indices, g)
        try:
            return _binary_solve(graph, ls, p, method, cfg)
        except SolverError as err:
            raise SolverError(f"class {c}: {err}", report=err.report) from err

    M = labels.num_classes
    if n_jobs == 1:
        columns = [solve_class(c) for c in range(M)]
    else:
        columns = Parallel(n_jobs=n_jobs)(delayed(solve_class)(c) for c in range(M))
    return np.column_stack(columns)


def _default_cfg(method, p, graph):
    if method in ("laplace", "newton"):
        return NewtonConfig(tol=1e-8)
    return GameConfig(p=p, tol=1e-4)


def predictions(scores):
    """Predicted class per vertex: argmax score, lowest class id on ties."""
    return np.argmax(scores, axis=1)


def accuracy(scores, truth, mask=None):
    """Fraction of (masked) vertices whose argmax class matches the truth.

    ``mask`` selects the evaluation subset (indices or boolean); it must be
    nonempty. Defaults to all vertices.
    """
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if truth.size != scores.shape[0]:
        raise ValueError("truth length must match the score matrix")
    if mask is None:
        mask = np.ones(truth.size, dtype=bool)
    mask = np.asarray(mask)
    if mask.dtype == bool:
        idx = np.flatnonzero(mask)
    else:
        idx = mask.astype(np.int64).ravel()
    if idx.size == 0:
        raise ValueError("evaluation mask is empty")
    pred = predictions(scores)
    return float(np.mean(pred[idx] == truth[idx]))
