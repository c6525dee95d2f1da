"""
plaplearn: graph p-Laplacian semi-supervised learning.

Build k-NN or radius graphs from point clouds, propagate few labels to the
whole graph by solving the variational or game-theoretic graph p-Laplace
equation (p >= 2 up to infinity), classify one-vs-rest, and verify the
discrete-to-continuum behavior of the graph operators empirically.
"""

from .classify import MulticlassLabels, accuracy, one_vs_rest, predictions
from .game import (
    GameConfig,
    alpha_bound,
    bracket_update,
    gradient_descent_solve,
    newton_like_solve,
    semi_implicit_solve,
)
from .graphs import (
    WeightedGraph,
    eps_graph,
    is_connected,
    knn_graph,
    knn_kernel_graph,
    knn_radii,
)
from .newton import (
    HomotopySchedule,
    NewtonConfig,
    assemble_newton_system,
    default_ladder,
    newton_step,
    solve_p2,
    solve_variational,
)
from .operators import (
    LabelSet,
    energy,
    game_operator,
    game_scaled_residual,
    graph_infinity,
    graph_laplacian_2,
    variational_residual,
    variational_scaled_residual,
)
from .reports import SolveReport, SolverError, StageReport

__version__ = "0.1.0"
