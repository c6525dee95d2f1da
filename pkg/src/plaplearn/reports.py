"""Solve reports shared by the variational and game solvers."""

import json
from dataclasses import dataclass, field

__all__ = ["StageReport", "SolveReport", "SolverError"]


class SolverError(RuntimeError):
    """Raised on solver non-convergence; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class StageReport:
    """One homotopy stage: exponent, iteration count, residual per iteration."""

    p: float
    iterations: int = 0
    residuals: list = field(default_factory=list)


@dataclass
class SolveReport:
    method: str = ""
    p: float = 0.0
    stages: list = field(default_factory=list)
    wall_time_ms: float = 0.0
    linear_solver: str = ""
    seed: int = None
    extra: dict = field(default_factory=dict)

    @property
    def total_iterations(self):
        return sum(s.iterations for s in self.stages)

    def to_dict(self, include_timing=True):
        d = {
            "method": self.method,
            "p": _json_num(self.p),
            "stages": [
                {
                    "p": _json_num(s.p),
                    "iterations": s.iterations,
                    "residuals": s.residuals,
                }
                for s in self.stages
            ],
            "linear_solver": self.linear_solver,
            "seed": self.seed,
        }
        if include_timing:
            d["wall_time_ms"] = self.wall_time_ms
        d.update({k: _json_num(v) for k, v in self.extra.items()})
        return d

    def to_json(self, include_timing=True):
        return json.dumps(self.to_dict(include_timing=include_timing), indent=2)


def _json_num(v):
    if isinstance(v, float) and v == float("inf"):
        return "inf"
    return v
