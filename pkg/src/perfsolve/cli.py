"""Command-line entry point: train, evaluate, oracle, homogenize, compare.

Exit codes: 0 success, 2 configuration error, 3 training divergence,
4 numerical failure.  Failures emit a machine-readable JSON record on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import homog, network as nets, oracle as orc, trainer
from .config import ConfigError, ExperimentConfig, parse_config
from .geometry import PerforatedDomain
from .homog import CellGeometry, GridField, SolverError, export_field, import_field
from .oracle import OracleError
from .stochastic import StepGeometryError, TimestepError
from .trainer import TrainConfig, TrainingDiverged

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_NUMERICAL = 4


class CliError(RuntimeError):
    def __init__(self, code: int, kind: str, message: str, detail=None):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.detail = detail


def export_grid(net: nets.FourierNetwork, d: PerforatedDomain, n: int) -> GridField:
    """Network values on the inclusive n-by-n lattice; perforations masked."""
    if n < 2:
        raise ValueError("grid resolution must be at least 2")
    x1 = np.linspace(d.rect.lo[0], d.rect.hi[0], n)
    x2 = np.linspace(d.rect.lo[1], d.rect.hi[1], n)
    X, Y = np.meshgrid(x1, x2, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    values = np.empty(pts.shape[0])
    chunk = 200_000
    for k in range(0, pts.shape[0], chunk):
        values[k:k + chunk] = nets.forward(net, pts[k:k + chunk])
    mask = np.ones(pts.shape[0], dtype=bool)
    for c, r in zip(d.centers, d.radii):
        dx = pts[:, 0] - c[0]
        dy = pts[:, 1] - c[1]
        mask &= dx * dx + dy * dy >= r * r
    return GridField(n=n, values=values.reshape(n, n), mask=mask.reshape(n, n))


def _train_config(cfg: ExperimentConfig, iterations=None, seed=None) -> TrainConfig:
    return TrainConfig(
        domain=cfg.domain, fields=cfg.fields, g=cfg.g, net=cfg.net,
        n_collocation=cfg.n_collocation, n_walkers=cfg.n_walkers, step=cfg.step,
        iterations=cfg.iterations if iterations is None else iterations,
        alpha0=cfg.alpha0, gamma=cfg.gamma, beta1=cfg.beta1, beta2=cfg.beta2,
        inner_steps=cfg.inner_steps,
        seed=cfg.seed if seed is None else seed,
        checkpoint_every=cfg.checkpoint_every)


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tc = _train_config(cfg, iterations=args.iterations, seed=args.seed)
    try:
        net, _ = trainer.train(tc, metrics_path=out / "metrics.jsonl",
                               checkpoint_dir=str(out), log_timing=args.timing)
    except TrainingDiverged as e:
        raise CliError(EXIT_DIVERGED, "divergence", str(e),
                       {"iteration": e.iteration, "loss": e.loss})
    nets.save_checkpoint(net, out / "final.bin", tc.seed, tc.iterations)
    print(json.dumps({"status": "ok", "iterations": tc.iterations,
                      "checkpoint": str(out / "final.bin")}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = parse_config(args.config)
    net, _ = nets.load_checkpoint(args.checkpoint)
    field = export_grid(net, cfg.domain, args.grid)
    out = Path(args.out)
    export_field(field, cfg.domain.rect, out, out.with_suffix(out.suffix + ".json"))
    print(json.dumps({"status": "ok", "grid": args.grid, "out": str(out)}))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = parse_config(args.config)
    if args.points:
        pts = np.loadtxt(args.points, delimiter=",", ndmin=2)
    else:
        pts = orc.ring_probes(cfg.domain, n_points=args.ring, seed=cfg.seed)
    dt = args.dt if args.dt else cfg.oracle_dt
    if dt is None:
        # resolve the smallest perforation comfortably
        r = cfg.domain.min_radius
        dt = 1e-4 if not np.isfinite(r) else min(1e-4, (0.1 * r / 1.2533) ** 2)
    walkers = args.walkers or cfg.oracle_n_walkers
    records = []
    for p in pts:
        est = orc.estimate_point(cfg.domain, cfg.fields, cfg.g, p, walkers, dt,
                                 seed=cfg.seed, mode=cfg.step.mode)
        rec = {"point": [float(p[0]), float(p[1])], **est.to_dict()}
        records.append(rec)
        print(json.dumps(rec))
    with open(args.out, "w") as f:
        json.dump(records, f, indent=1)
        f.write("\n")
    return EXIT_OK


def cmd_homogenize(args) -> int:
    cfg = parse_config(args.config)
    if cfg.lattice is None:
        raise CliError(EXIT_CONFIG, "config",
                       "homogenize requires a [domain.lattice] configuration")
    if not cfg.fields.v_is_zero:
        raise CliError(EXIT_CONFIG, "config",
                       "homogenize requires a pure diffusion problem (V = 0)")
    nx, ny, radius = cfg.lattice
    w = cfg.domain.rect.widths
    if abs(w[0] / nx - w[1] / ny) > 1e-12:
        raise CliError(EXIT_CONFIG, "config", "lattice cells must be square")
    scale = nx / w[0]
    from .geometry import Perforation
    cell = CellGeometry(Perforation((0.0, 0.0), radius * scale))
    tensor = homog.effective_tensor(cell, args.resolution)
    # the homogenized operator absorbs the 1/2 diffusion factor: G_hom = 2 G
    G_hom = lambda x: 2.0 * cfg.fields.G(x, np.zeros(np.shape(x)[0]))
    u0 = homog.solve_homogenized(tensor, G_hom, cfg.g, cfg.domain.rect, args.grid)
    out = Path(args.out)
    export_field(u0, cfg.domain.rect, out.with_suffix(".csv"),
                 out.with_suffix(".csv.json"))
    record = {"tensor": tensor.a.tolist(), "resolution": args.resolution,
              "grid": args.grid, "field": str(out.with_suffix(".csv"))}
    with open(out.with_suffix(".json"), "w") as f:
        json.dump(record, f, indent=1)
        f.write("\n")
    print(json.dumps({"status": "ok", "tensor": tensor.a.tolist()}))
    return EXIT_OK


def cmd_compare(args) -> int:
    a, _ = import_field(args.a)
    b, _ = import_field(args.b)
    err = homog.relative_l2(a, b)
    print(json.dumps({"relative_l2": err}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfsolve",
                                description="Mesh-free solver for perforated domains")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train the surrogate network")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--timing", action="store_true",
                   help="include wall-clock timing in metrics (breaks byte reproducibility)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on a grid")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--grid", type=int, required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle", help="Monte Carlo reference estimates")
    o.add_argument("--config", required=True)
    o.add_argument("--points", help="CSV file of probe points (x1,x2 per line)")
    o.add_argument("--ring", type=int, default=16,
                   help="number of ring probe points when --points is absent")
    o.add_argument("--walkers", type=int, default=None)
    o.add_argument("--dt", type=float, default=None)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)

    h = sub.add_parser("homogenize", help="effective tensor and homogenized solve")
    h.add_argument("--config", required=True)
    h.add_argument("--resolution", type=int, default=512,
                   help="cell-problem grid resolution")
    h.add_argument("--grid", type=int, default=201,
                   help="homogenized-solve grid resolution")
    h.add_argument("--out", required=True, help="output path prefix")
    h.set_defaults(func=cmd_homogenize)

    c = sub.add_parser("compare", help="masked relative L2 difference of two grids")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _emit_error("config", str(e), {"errors": e.errors})
        return EXIT_CONFIG
    except CliError as e:
        _emit_error(e.kind, str(e), e.detail)
        return e.code
    except (SolverError, OracleError, TimestepError, StepGeometryError) as e:
        # TimestepError subclasses ValueError: numerical failures first
        _emit_error("numerical", str(e))
        return EXIT_NUMERICAL
    except (FileNotFoundError, ValueError) as e:
        _emit_error("config", str(e))
        return EXIT_CONFIG


def _emit_error(kind: str, message: str, detail=None) -> None:
    record = {"status": "error", "kind": kind, "message": message}
    if detail is not None:
        record["detail"] = detail
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
