"""Pointwise Monte Carlo reference solver (run-to-exit walkers).

Every walker reflects at perforations and runs until absorbed at the outer
rectangle; the estimate averages g(exit) minus the accumulated source
integral, Girsanov-weighted when an advection field is present.  Only
solution-independent fields are admissible, which keeps this estimator fully
independent of any trained surrogate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .geometry import PerforatedDomain, Region, classify_point
from .rng import substream_seed
from .stochastic import (
    FieldSpec,
    StepConfig,
    TimestepError,
    check_timestep,
    run_kernel,
    simulate_paths_numpy,
)

CENSOR_LIMIT = 1e-3
_CHUNK = 50_000


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    stderr: float
    n_walkers: int
    mean_exit_time: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr,
                "n": self.n_walkers, "mean_exit_time": self.mean_exit_time}


def estimate_point(d: PerforatedDomain, fields: FieldSpec, g: Callable,
                   x, n_walkers: int, dt_micro: float,
                   max_steps: Optional[int] = None, seed: int = 0,
                   mode: str = "drifted") -> OracleEstimate:
    """Feynman-Kac estimate of the solution at a single interior point."""
    if fields.depends_on_u:
        raise OracleError("oracle requires linear problem")
    x = np.asarray(x, dtype=float).reshape(2)
    if classify_point(d, x).region is not Region.INTERIOR:
        raise OracleError(f"start point {x.tolist()} is not interior")
    if len(d.perforations) > 0:
        _, ok = check_timestep(dt_micro, d.min_radius)
        if not ok:
            raise TimestepError("dt_micro too large for the smallest perforation")
    if max_steps is None:
        # generous default: walkers in a unit-scale box exit in O(1) time
        width = max(d.rect.widths)
        max_steps = int(50.0 * width * width / dt_micro)

    # fold the start point into the stream seed so estimates at different
    # points are decorrelated even under a shared seed
    point_tag = int.from_bytes(x.tobytes()[:8], "little") \
        ^ int.from_bytes(x.tobytes()[8:], "little")
    seed_eff = substream_seed(seed ^ 0x4F52, point_tag)

    payoffs = np.empty(n_walkers)
    exit_times = np.empty(n_walkers)
    censored = 0
    done = 0
    while done < n_walkers:
        take = min(_CHUNK, n_walkers - done)
        starts = np.broadcast_to(x, (take, 2))
        streams = np.arange(done, done + take, dtype=np.uint64)
        if fields.v_is_zero and fields.g_const is not None:
            batch = run_kernel(d, np.ascontiguousarray(starts), streams,
                               seed_eff, dt_micro, max_steps, fields.g_const)
        else:
            cfg = StepConfig(dt_micro=dt_micro, steps_per_macro=1, mode=mode)
            batch = simulate_paths_numpy(d, fields, None, np.array(starts), cfg,
                                         seed_eff, streams, max_steps=max_steps)
        censored += int((~batch.killed).sum())
        terminal = np.where(batch.killed,
                            np.asarray(g(batch.exit_point)), np.nan)
        pay = terminal - batch.integral_G
        if mode == "brownian_weighted":
            pay = pay * np.exp(batch.log_weight)
        payoffs[done:done + take] = pay
        exit_times[done:done + take] = batch.elapsed
        done += take

    if censored > CENSOR_LIMIT * n_walkers:
        raise OracleError(
            f"increase max_steps: {censored}/{n_walkers} walkers censored")
    ok = np.isfinite(payoffs)
    vals = payoffs[ok]
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return OracleEstimate(mean=mean, stderr=stderr, n_walkers=int(vals.size),
                          mean_exit_time=float(exit_times[ok].mean()))


def ring_probes(d: PerforatedDomain, n_points: int = 16, seed: int = 0) -> np.ndarray:
    """Probe points on two concentric rings around the perforation cloud.

    Ring radii interpolate between the perforation envelope and the rectangle
    boundary; angles are jittered by the seed.  Falls back to rings around the
    rectangle center when there are no perforations.
    """
    rng = np.random.default_rng([seed, n_points])
    lo, hi = np.asarray(d.rect.lo), np.asarray(d.rect.hi)
    center = 0.5 * (lo + hi)
    half = 0.5 * min(hi - lo)
    if len(d.perforations) > 0:
        env = max(float(np.hypot(*(c - center))) + r
                  for c, r in zip(d.centers, d.radii))
        env = min(env, 0.8 * half)
    else:
        env = 0.3 * half
    radii = [env + 0.3 * (half - env), env + 0.6 * (half - env)]
    pts = []
    per_ring = n_points // 2
    for k, r in enumerate(radii):
        offset = rng.uniform(0.0, 2 * np.pi)
        count = per_ring if k == 0 else n_points - per_ring
        for j in range(count):
            th = offset + 2 * np.pi * j / count
            p = center + r * np.array([np.cos(th), np.sin(th)])
            pts.append(p)
    pts = np.array(pts)
    keep = [classify_point(d, p).region is Region.INTERIOR for p in pts]
    return pts[np.array(keep)]


def compare_network(u_net: Callable, oracle_table: list, tol: float = 0.0,
                    floor: float = 1e-8) -> dict:
    """Per-point and aggregate relative errors of a surrogate vs the oracle.

    oracle_table is a list of (point, OracleEstimate).  Points where the
    deviation exceeds 3 stderr + tol, or where the surrogate is non-finite,
    are flagged.
    """
    if not oracle_table:
        raise ValueError("oracle table is empty")
    points = np.array([np.asarray(p, dtype=float) for p, _ in oracle_table])
    est = [e for _, e in oracle_table]
    values = np.asarray(u_net(points), dtype=float)
    rows = []
    rel_errs = []
    for k, e in enumerate(est):
        v = float(values[k])
        if not np.isfinite(v):
            rows.append({"point": points[k].tolist(), "net": v, "oracle": e.mean,
                         "rel_error": None, "flagged": True})
            continue
        abs_err = abs(v - e.mean)
        rel = abs_err / max(abs(e.mean), floor)
        rel_errs.append(rel)
        rows.append({"point": points[k].tolist(), "net": v, "oracle": e.mean,
                     "rel_error": rel,
                     "flagged": bool(abs_err > 3.0 * e.stderr + tol)})
    agg = float(np.sqrt(np.mean(np.square(rel_errs)))) if rel_errs else float("nan")
    return {"points": rows, "rms_relative_error": agg,
            "n_flagged": sum(r["flagged"] for r in rows)}
