"""
Command-line driver
===================

Subcommands::

    plaplearn synth       --config cfg --seed S [--out DIR] [--n --d --m --K]
    plaplearn solve       --config cfg ...      [--p --method --tol]
    plaplearn classify    --config cfg ...      [--p --method --tol]
    plaplearn consistency --config cfg ...
    plaplearn bench       --config cfg ...

Configuration files are plain ``section.key = value`` lines with ``#``
comments. Unknown keys are rejected. A seed is mandatory (file or --seed).
Every run creates ``<out>/<timestamp>-<confighash>/`` containing the echoed
resolved configuration, the result CSV/JSON files, and ``timing.txt``.
With a fixed configuration and seed all outputs except the timing files are
byte-identical across runs.

Exit codes: 0 success, 2 invalid arguments, 3 solver non-convergence,
4 I/O failure.
"""

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, io
from .classify import MulticlassLabels, accuracy, one_vs_rest, predictions
from .continuum import CSV_COLUMNS, PRESETS, consistency_experiment
from .game import GameConfig, gradient_descent_solve, newton_like_solve, semi_implicit_solve
from .graphs import is_connected, knn_graph
from .newton import NewtonConfig, solve_p2, solve_variational
from .operators import LabelSet
from .reports import SolverError

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4

GAME_METHODS = ("gradient_descent", "newton_like", "semi_implicit")
ALL_METHODS = ("laplace", "newton") + GAME_METHODS


class ConfigError(ValueError):
    pass


def _parse_scalar(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    if low in ("inf", "infinity"):
        return np.inf
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _parse_list(text):
    return [_parse_scalar(tok) for tok in str(text).split(",") if tok.strip()]


# Known keys per command: {key: default}. None means "no default, optional";
# _REQUIRED marks keys that must be present.
_REQUIRED = object()

_COMMON = {"seed": _REQUIRED}
_GRAPH = {"graph.K": 10}
_IO_IN = {
    "io.points": None, "io.graph": None, "io.labels": None,
    "io.truth": None, "io.idx_images": None, "io.idx_labels": None,
    "io.dim": None,
}

KNOWN_KEYS = {
    "synth": {**_COMMON, **_GRAPH, "synth.n": _REQUIRED, "synth.d": _REQUIRED,
              "synth.m": _REQUIRED},
    "solve": {**_COMMON, **_GRAPH, **_IO_IN,
              "solve.method": "newton", "solve.p": 3.0, "solve.tol": 1e-10,
              "solve.homotopy": True, "solve.lambda": 1.0, "solve.alpha": None,
              "solve.eps_reg": 0.0, "solve.theta": None,
              "solve.include_zero": False, "solve.max_outer": 30,
              "solve.max_iter": 500_000, "solve.preconditioner": None,
              "solve.inner_tol": None},
    "classify": {**_COMMON, **_GRAPH, **_IO_IN,
                 "classify.method": "laplace", "classify.p": 2.0,
                 "classify.tol": 1e-4, "classify.encoding": "1,0",
                 "classify.n_jobs": 1, "classify.include_zero": False},
    "consistency": {**_COMMON,
                    "consistency.preset": _REQUIRED,
                    "consistency.family": "eps_ball,knn_nonsym,knn_sym",
                    "consistency.variant": "game_p", "consistency.p": 9.0,
                    "consistency.n_list": "1024,16384",
                    "consistency.seeds": 10, "consistency.eps_c": 1.0,
                    "consistency.k_c": 0.25, "consistency.margin_factor": 3.0,
                    "consistency.d": 2},
    "bench": {**_COMMON, **_GRAPH,
              "bench.methods": "newton,newton_like,semi_implicit,gradient_descent",
              "bench.n_list": ",".join(str(2**j) for j in range(6, 16)),
              "bench.d_list": "2,5,10", "bench.p": 11.0, "bench.tol": 1e-7,
              "bench.m": 10, "bench.trials": 1},
}


def load_config(command, path=None, overrides=None):
    """Parse, validate against the known keys, and apply defaults."""
    known = KNOWN_KEYS[command]
    cfg = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise IOError(f"cannot read config {path}: {err}") from err
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r} for {command}")
            cfg[key] = _parse_scalar(value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {command}")
        cfg[key] = value
    for key, default in known.items():
        if key not in cfg:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            cfg[key] = default
    return cfg


def _config_repr(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float) and np.isinf(value):
        return "inf"
    return str(value)


def make_run_dir(out, cfg):
    canon = "\n".join(f"{k} = {_config_repr(cfg[k])}" for k in sorted(cfg))
    digest = hashlib.sha256(canon.encode()).hexdigest()[:8]
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%f")
    run_dir = Path(out) / f"{stamp}-{digest}"
    bump = 0
    while run_dir.exists():
        bump += 1
        run_dir = Path(out) / f"{stamp}-{digest}-{bump}"
    run_dir.mkdir(parents=True)
    (run_dir / "config.txt").write_text(canon + "\n")
    return run_dir


def _report_header(command, cfg):
    return {
        "command": command,
        "version": __version__,
        "config": {k: _config_repr(cfg[k]) for k in sorted(cfg)},
    }


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_graph_and_points(cfg):
    """Graph from cache if given, else built from the configured points."""
    if cfg.get("io.graph"):
        graph = io.read_graph_cache(cfg["io.graph"])
        if cfg.get("io.dim"):
            graph.dim = int(cfg["io.dim"])
        return graph
    pts = _load_points(cfg)
    if pts is None:
        raise ConfigError("need io.graph or io.points (or io.idx_images)")
    return knn_graph(pts, int(cfg["graph.K"]))


def _load_points(cfg):
    if cfg.get("io.points"):
        path = str(cfg["io.points"])
        if path.endswith(".csv"):
            return io.read_points_csv(path)
        return io.read_points_binary(path)
    if cfg.get("io.idx_images"):
        # Raw pixel features: usable, but not comparable to pipelines that
        # extract proper features first.
        return io.read_idx_images(str(cfg["io.idx_images"]))
    return None


def cmd_synth(cfg, run_dir):
    n, d, m = int(cfg["synth.n"]), int(cfg["synth.d"]), int(cfg["synth.m"])
    if n < 1 or d < 1:
        raise ConfigError("synth.n and synth.d must be positive")
    if m >= n:
        raise ConfigError("synth.m must be smaller than synth.n")
    rng = np.random.default_rng(int(cfg["seed"]))
    points = rng.random((n, d))
    labels = rng.random(m)
    graph = knn_graph(points, int(cfg["graph.K"]))
    io.write_points_binary(run_dir / "points.plap", points)
    io.write_value_labels(run_dir / "labels.csv", np.arange(m), labels)
    io.write_graph_cache(run_dir / "graph.bin", graph)
    _write_json(run_dir / "report.json", {
        **_report_header("synth", cfg),
        "n": n, "d": d, "m": m, "connected": bool(is_connected(graph)),
        "sigma": graph.sigma,
    })
    return EXIT_OK


def _game_config(cfg, p):
    return GameConfig(
        p=p,
        lam=float(cfg.get("solve.lambda", 1.0)),
        alpha=cfg.get("solve.alpha"),
        eps_reg=float(cfg.get("solve.eps_reg", 0.0)),
        tol=float(cfg["solve.tol"]),
        theta=cfg.get("solve.theta"),
        max_iter=int(cfg.get("solve.max_iter", 500_000)),
        include_zero=bool(cfg.get("solve.include_zero", False)),
        preconditioner=cfg.get("solve.preconditioner"),
        inner_tol=cfg.get("solve.inner_tol"),
        seed=int(cfg["seed"]),
    )


def cmd_solve(cfg, run_dir):
    graph = _load_graph_and_points(cfg)
    if not cfg.get("io.labels"):
        raise ConfigError("solve needs io.labels")
    idx, vals = io.read_value_labels(cfg["io.labels"])
    labels = LabelSet(idx, vals)
    method = str(cfg["solve.method"])
    p = float(cfg["solve.p"])
    homotopy = bool(cfg["solve.homotopy"])

    t0 = time.perf_counter()
    if method == "laplace" or (method == "newton" and p == 2.0):
        ncfg = NewtonConfig(tol=float(cfg["solve.tol"]), seed=int(cfg["seed"]),
                            preconditioner=cfg.get("solve.preconditioner") or "jacobi",
                            inner_tol=cfg.get("solve.inner_tol"))
        u = solve_p2(graph, labels, ncfg)
        report = None
    elif method == "newton":
        ncfg = NewtonConfig(tol=float(cfg["solve.tol"]),
                            max_outer=int(cfg["solve.max_outer"]),
                            preconditioner=cfg.get("solve.preconditioner") or "jacobi",
                            inner_tol=cfg.get("solve.inner_tol"),
                            seed=int(cfg["seed"]))
        u, report = solve_variational(
            graph, labels, p, schedule="auto" if homotopy else None, cfg=ncfg
        )
    elif method in GAME_METHODS:
        gcfg = _game_config(cfg, p)
        if method == "gradient_descent":
            u, report = gradient_descent_solve(graph, labels, gcfg)
        elif method == "newton_like":
            u, report = newton_like_solve(
                graph, labels, gcfg, schedule="auto" if homotopy else None
            )
        else:
            u, report = semi_implicit_solve(graph, labels, gcfg)
    else:
        raise ConfigError(f"unknown solve.method {method!r}")
    elapsed = time.perf_counter() - t0

    with open(run_dir / "solution.csv", "w") as fh:
        fh.write("vertex_index,value\n")
        for i, v in enumerate(u):
            fh.write(f"{i},{repr(float(v))}\n")
    payload = _report_header("solve", cfg)
    if report is not None:
        payload["solve"] = report.to_dict(include_timing=False)
        with open(run_dir / "residuals.csv", "w") as fh:
            fh.write("stage_p,iteration,scaled_residual\n")
            for stage in report.stages:
                for it, res in enumerate(stage.residuals, 1):
                    fh.write(f"{_config_repr(stage.p)},{it},{repr(float(res))}\n")
    _write_json(run_dir / "report.json", payload)
    (run_dir / "timing.txt").write_text(f"wall_seconds = {elapsed:.6f}\n")
    return EXIT_OK


def cmd_classify(cfg, run_dir):
    graph = _load_graph_and_points(cfg)
    if not is_connected(graph):
        raise ConfigError(
            "graph is disconnected; increase graph.K so every vertex can "
            "reach a label"
        )
    if not cfg.get("io.labels"):
        raise ConfigError("classify needs io.labels (the labeled subset)")
    idx, cls = io.read_class_labels(cfg["io.labels"])
    labels = MulticlassLabels(idx, cls)
    truth = None
    if cfg.get("io.truth"):
        tidx, tcls = io.read_class_labels(cfg["io.truth"])
        truth = np.zeros(graph.n, dtype=np.int64)
        truth[tidx] = tcls
    elif cfg.get("io.idx_labels"):
        truth = io.read_idx_labels(str(cfg["io.idx_labels"]))
        if truth.size != graph.n:
            raise ConfigError("io.idx_labels length does not match the graph")
    enc = _parse_list(cfg["classify.encoding"])
    methods = [str(m) for m in _parse_list(cfg["classify.method"])]
    ps = [float(p) for p in _parse_list(cfg["classify.p"])]

    t0 = time.perf_counter()
    acc_rows = []
    for method in methods:
        if method not in ALL_METHODS:
            raise ConfigError(f"unknown classify.method {method!r}")
        for p in ps:
            if method in GAME_METHODS:
                solver_cfg = GameConfig(p=p, tol=float(cfg["classify.tol"]),
                                        include_zero=bool(cfg["classify.include_zero"]),
                                        seed=int(cfg["seed"]))
            else:
                solver_cfg = NewtonConfig(tol=float(cfg["classify.tol"]),
                                          seed=int(cfg["seed"]))
            scores = one_vs_rest(graph, labels, p, method, cfg=solver_cfg,
                                 encoding=(float(enc[0]), float(enc[1])),
                                 n_jobs=int(cfg["classify.n_jobs"]))
            pred = predictions(scores)
            tag = f"{method}_p{_config_repr(p)}"
            io.write_predictions(
                run_dir / f"predictions_{tag}.csv", pred,
                scores[np.arange(graph.n), pred],
            )
            if truth is not None:
                mask = np.ones(graph.n, dtype=bool)
                mask[labels.indices] = False
                acc_rows.append((method, p, labels.indices.size, graph.n,
                                 accuracy(scores, truth, mask)))
    elapsed = time.perf_counter() - t0

    if acc_rows:
        with open(run_dir / "accuracy.csv", "w") as fh:
            fh.write("method,p,m,n,accuracy\n")
            for method, p, m, n, acc in acc_rows:
                fh.write(f"{method},{_config_repr(p)},{m},{n},{repr(acc)}\n")
    _write_json(run_dir / "report.json", {
        **_report_header("classify", cfg),
        "num_classes": labels.num_classes,
        "methods": methods, "p_values": [_config_repr(p) for p in ps],
    })
    (run_dir / "timing.txt").write_text(f"wall_seconds = {elapsed:.6f}\n")
    return EXIT_OK


def cmd_consistency(cfg, run_dir):
    preset = str(cfg["consistency.preset"])
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    problem = PRESETS[preset](d=int(cfg["consistency.d"]))
    families = [str(f) for f in _parse_list(cfg["consistency.family"])]
    n_list = [int(n) for n in _parse_list(cfg["consistency.n_list"])]
    seeds_cfg = cfg["consistency.seeds"]
    seeds = list(range(int(seeds_cfg))) if isinstance(seeds_cfg, int) \
        else [int(s) for s in _parse_list(seeds_cfg)]
    base_seed = int(cfg["seed"])
    seeds = [base_seed + s for s in seeds]

    t0 = time.perf_counter()
    records = []
    for family in families:
        records.extend(consistency_experiment(
            problem, family, float(cfg["consistency.p"]), n_list, seeds,
            variant=str(cfg["consistency.variant"]),
            margin_factor=float(cfg["consistency.margin_factor"]),
            eps_c=float(cfg["consistency.eps_c"]),
            k_c=float(cfg["consistency.k_c"]),
        ))
    elapsed = time.perf_counter() - t0

    with open(run_dir / "consistency.csv", "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for rec in records:
            fh.write(",".join(
                repr(rec[c]) if isinstance(rec[c], float) else str(rec[c])
                for c in CSV_COLUMNS
            ) + "\n")
    lines = []
    for family in families:
        for n in n_list:
            errs = [r["err_median"] for r in records
                    if r["family"] == family and r["n"] == n]
            lines.append(f"{family} n={n}: median err_median = {repr(float(np.median(errs)))}")
    (run_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    _write_json(run_dir / "report.json", {
        **_report_header("consistency", cfg),
        "preset": preset, "records": len(records),
    })
    (run_dir / "timing.txt").write_text(f"wall_seconds = {elapsed:.6f}\n")
    return EXIT_OK


def cmd_bench(cfg, run_dir):
    methods = [str(m) for m in _parse_list(cfg["bench.methods"])]
    n_list = [int(n) for n in _parse_list(cfg["bench.n_list"])]
    d_list = [int(d) for d in _parse_list(cfg["bench.d_list"])]
    p = float(cfg["bench.p"])
    tol = float(cfg["bench.tol"])
    m = int(cfg["bench.m"])
    trials = int(cfg["bench.trials"])
    base_seed = int(cfg["seed"])

    rows = []
    for d in d_list:
        for n in n_list:
            for trial in range(trials):
                rng = np.random.default_rng(base_seed + 7919 * trial + n + 31 * d)
                points = rng.random((n, d))
                labels = LabelSet(np.arange(m), rng.random(m))
                graph = knn_graph(points, int(cfg["graph.K"]))
                for method in methods:
                    t0 = time.perf_counter()
                    try:
                        iters = _bench_once(graph, labels, method, p, tol, base_seed)
                    except SolverError as err:
                        raise SolverError(
                            f"bench {method} n={n} d={d}: {err}", report=err.report
                        ) from err
                    rows.append((method, n, d, trial,
                                 time.perf_counter() - t0, iters))
    with open(run_dir / "timing.csv", "w") as fh:
        fh.write("method,n,d,trial,seconds,iterations\n")
        for method, n, d, trial, sec, iters in rows:
            fh.write(f"{method},{n},{d},{trial},{sec:.6f},{iters}\n")
    _write_json(run_dir / "report.json", {
        **_report_header("bench", cfg), "rows": len(rows),
    })
    return EXIT_OK


def _bench_once(graph, labels, method, p, tol, seed):
    if method == "newton":
        _, rep = solve_variational(graph, labels, p, schedule="auto",
                                   cfg=NewtonConfig(tol=tol, seed=seed))
    elif method == "newton_like":
        _, rep = newton_like_solve(graph, labels, GameConfig(p=p, tol=tol, seed=seed),
                                   schedule="auto")
    elif method == "semi_implicit":
        _, rep = semi_implicit_solve(graph, labels, GameConfig(p=p, tol=tol, seed=seed))
    elif method == "gradient_descent":
        _, rep = gradient_descent_solve(graph, labels, GameConfig(p=p, tol=tol, seed=seed))
    else:
        raise ConfigError(f"unknown bench method {method!r}")
    return rep.total_iterations


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plaplearn",
        description="Graph p-Laplacian learning: synthesize, solve, classify, verify.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "solve", "classify", "consistency", "bench"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="runs")
        sp.add_argument("--p", default=None)
        sp.add_argument("--method", default=None)
        sp.add_argument("--tol", type=float, default=None)
        sp.add_argument("--n", type=int, default=None)
        sp.add_argument("--d", type=int, default=None)
        sp.add_argument("--m", type=int, default=None)
        sp.add_argument("--K", type=int, default=None)
    args = parser.parse_args(argv)

    overrides = {"seed": args.seed, "graph.K": args.K}
    cmd = args.command
    if cmd == "synth":
        overrides.update({"synth.n": args.n, "synth.d": args.d, "synth.m": args.m})
    elif cmd == "solve":
        overrides.update({
            "solve.p": _parse_scalar(args.p) if args.p else None,
            "solve.method": args.method, "solve.tol": args.tol,
        })
    elif cmd == "classify":
        overrides.update({
            "classify.p": args.p, "classify.method": args.method,
            "classify.tol": args.tol,
        })
    elif cmd == "consistency":
        overrides.update({
            "consistency.p": _parse_scalar(args.p) if args.p else None,
            "consistency.d": args.d,
        })
    elif cmd == "bench":
        overrides.update({
            "bench.p": _parse_scalar(args.p) if args.p else None,
            "bench.methods": args.method, "bench.tol": args.tol,
            "bench.m": args.m,
        })
    handlers = {
        "synth": cmd_synth, "solve": cmd_solve, "classify": cmd_classify,
        "consistency": cmd_consistency, "bench": cmd_bench,
    }
    try:
        cfg = load_config(cmd, args.config, overrides)
        run_dir = make_run_dir(args.out, cfg)
        code = handlers[cmd](cfg, run_dir)
        print(f"wrote {run_dir}")
        return code
    except (ConfigError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as err:
        print(f"solver did not converge: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except OSError as err:
        print(f"io failure: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
