"""Batched stochastic walkers with Dirichlet killing and Neumann reflection.

A walker advances in micro steps of size dt_micro.  Each step proposes a
Gaussian displacement (plus drift in "drifted" mode); the segment from the old
to the proposed position is first tested against the outer rectangle (kill,
with linear exit interpolation), then the proposed point is tested against the
perforations (mirror across the circle, the symmetrized Euler scheme).  Path
integrals of the source term and of the Girsanov exponent use left-endpoint
quadrature split at the estimated boundary-contact fraction.

Two engines share these semantics: a numba kernel for the drift-free,
constant-source case (the performance path), and a vectorized numpy engine for
general, possibly solution-dependent fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np

from .geometry import (
    BOUNDARY_TOL,
    GeometryError,
    PerforatedDomain,
    Perforation,
    classify_point,
    perforation_index,
    project_to_circle,
    segment_domain_exit,
    Region,
)
from .rng import WalkerRng, normal_pair_nb, normal_pairs

KAPPA_2D = math.sqrt(math.pi / 2.0)
DEFAULT_RATIO_THRESHOLD = 0.2
MAX_REFLECTIONS = 4


class TimestepError(ValueError):
    pass


class StepGeometryError(RuntimeError):
    """Reflected point could not be returned to the domain."""


@dataclass(frozen=True)
class StepConfig:
    dt_micro: float
    steps_per_macro: int
    mode: str = "drifted"  # "drifted" or "brownian_weighted"

    def __post_init__(self):
        if not self.dt_micro > 0:
            raise TimestepError(f"dt_micro must be positive, got {self.dt_micro}")
        if self.steps_per_macro < 1:
            raise TimestepError(f"steps_per_macro must be >= 1, got {self.steps_per_macro}")
        if self.mode not in ("drifted", "brownian_weighted"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def dt_macro(self) -> float:
        return self.dt_micro * self.steps_per_macro


@dataclass
class FieldSpec:
    """Advection field V(x, u) -> 2-vector and source G(x, u) -> scalar.

    Callables are vectorized: x has shape (n, 2), u (when used) shape (n,);
    V returns (n, 2) and G returns (n,).  Flags let the engines specialize.
    """

    V: Optional[Callable] = None  # None means V identically zero
    G: Callable = None
    v_depends_u: bool = False
    g_depends_u: bool = False
    g_const: Optional[float] = None  # set when G is a known constant

    @property
    def v_is_zero(self) -> bool:
        return self.V is None

    @property
    def depends_on_u(self) -> bool:
        return self.v_depends_u or self.g_depends_u

    @staticmethod
    def constant(g_value: float) -> "FieldSpec":
        g = float(g_value)
        return FieldSpec(V=None, G=lambda x, u=None: np.full(np.shape(x)[0], g),
                         g_const=g)


@dataclass
class WalkerState:
    position: np.ndarray
    integral_G: float = 0.0
    log_weight: float = 0.0
    elapsed: float = 0.0
    steps: int = 0
    exit_point: Optional[np.ndarray] = None
    exit_alpha: Optional[float] = None

    @property
    def active(self) -> bool:
        return self.exit_point is None


@dataclass
class PathBatch:
    """Per-walker outcomes of a batched simulation, flat over (start, walker)."""

    position: np.ndarray      # (n, 2) last interior position (active walkers)
    killed: np.ndarray        # (n,) bool
    exit_point: np.ndarray    # (n, 2), valid where killed
    integral_G: np.ndarray    # (n,)
    log_weight: np.ndarray    # (n,)
    elapsed: np.ndarray       # (n,)
    steps: np.ndarray         # (n,) completed micro steps

    def __len__(self) -> int:
        return self.position.shape[0]


def check_timestep(dt_micro: float, min_radius: float,
                   ratio_threshold: float = DEFAULT_RATIO_THRESHOLD) -> tuple[float, bool]:
    """Mean Brownian step length and whether it resolves the smallest disk.

    The 2-D mean displacement over one micro step is sqrt(pi/2) * sqrt(dt);
    it must be well below the smallest perforation radius so that at most one
    reflection can occur per step.
    """
    if not dt_micro > 0:
        raise TimestepError("dt_micro must be positive")
    if not min_radius > 0:
        raise TimestepError("min_radius must be positive")
    mean_step = KAPPA_2D * math.sqrt(dt_micro)
    return mean_step, mean_step <= ratio_threshold * min_radius


def accumulate_source(h_left: float, h_proj: float, beta: float, dt: float) -> float:
    """Left-endpoint quadrature increment, split at the reflection fraction.

    beta = 0 gives the plain rule h_left * dt; the killed case is the same
    formula with (alpha, 0) in place of (1 - beta, beta) weights, i.e.
    h_left * alpha * dt.
    """
    return h_left * (1.0 - beta) * dt + h_proj * beta * dt


def accumulate_girsanov(V_left: np.ndarray, V_proj: Optional[np.ndarray],
                        B_left: np.ndarray, proj: Optional[np.ndarray],
                        Y: np.ndarray, reflected: bool) -> float:
    """Stochastic-integral increment of V against the Brownian increment."""
    if reflected:
        return float(np.dot(V_left, proj - B_left) + np.dot(V_proj, proj - Y))
    return float(np.dot(V_left, Y - B_left))


# ---------------------------------------------------------------------------
# Scalar reference stepper
# ---------------------------------------------------------------------------

def micro_step(d: PerforatedDomain, fields: FieldSpec, u_prev: float,
               state: WalkerState, cfg: StepConfig, rng: WalkerRng,
               z: Optional[np.ndarray] = None) -> WalkerState:
    """One micro step of a single walker (reference implementation).

    z overrides the Gaussian draw (for tests); otherwise it comes from rng.
    """
    if not state.active:
        raise ValueError("micro_step requires an active walker")
    dt = cfg.dt_micro
    x = state.position
    if z is None:
        z = np.array(rng.draw())
    else:
        rng.step += 1

    def eval_G(p, u):
        return float(np.asarray(fields.G(p.reshape(1, 2), np.array([u])))[0])

    def eval_V(p, u):
        return np.asarray(fields.V(p.reshape(1, 2), np.array([u]))).reshape(2)

    g_left = eval_G(x, u_prev)
    v_left = np.zeros(2) if fields.v_is_zero else eval_V(x, u_prev)

    drift = v_left * dt if cfg.mode == "drifted" else 0.0
    y = x + drift + math.sqrt(dt) * z

    new = WalkerState(position=x.copy(), integral_G=state.integral_G,
                      log_weight=state.log_weight, elapsed=state.elapsed,
                      steps=state.steps)

    hit = segment_domain_exit(d, x, y)
    if hit is not None:
        exit_point, alpha = hit
        new.integral_G += g_left * alpha * dt
        if cfg.mode == "brownian_weighted" and not fields.v_is_zero:
            new.log_weight += accumulate_girsanov(v_left, None, x, None, exit_point,
                                                  reflected=False)
            new.log_weight -= 0.5 * float(np.dot(v_left, v_left)) * alpha * dt
        new.exit_point = exit_point
        new.exit_alpha = alpha
        new.elapsed += alpha * dt
        return new

    idx = perforation_index(d, y)
    if idx >= 0:
        perf = d.perforations[idx]
        proj = project_to_circle(perf, y)
        beta = _reflection_fraction(x, proj, y)
        xr = y + 2.0 * (proj - y)
        g_proj = eval_G(proj, u_prev)
        new.integral_G += accumulate_source(g_left, g_proj, beta, dt)
        if cfg.mode == "brownian_weighted" and not fields.v_is_zero:
            v_proj = eval_V(proj, u_prev)
            new.log_weight += accumulate_girsanov(v_left, v_proj, x, proj, y,
                                                  reflected=True)
            vsq_inc = accumulate_source(float(np.dot(v_left, v_left)),
                                        float(np.dot(v_proj, v_proj)), beta, dt)
            new.log_weight -= 0.5 * vsq_inc
        xr = _settle_reflections(d, xr)
        new.position = xr
    else:
        new.integral_G += g_left * dt
        if cfg.mode == "brownian_weighted" and not fields.v_is_zero:
            new.log_weight += accumulate_girsanov(v_left, None, x, None, y,
                                                  reflected=False)
            new.log_weight -= 0.5 * float(np.dot(v_left, v_left)) * dt
        new.position = y

    new.elapsed += dt
    new.steps += 1
    return new


def _reflection_fraction(x: np.ndarray, proj: np.ndarray, y: np.ndarray) -> float:
    d_in = float(np.hypot(*(proj - y)))
    d_to = float(np.hypot(*(x - proj)))
    denom = d_to + d_in
    return d_in / denom if denom > 0 else 0.0


def _settle_reflections(d: PerforatedDomain, x: np.ndarray) -> np.ndarray:
    """Iterate the mirror map while the point remains inside a perforation."""
    for _ in range(MAX_REFLECTIONS):
        idx = perforation_index(d, x)
        if idx < 0:
            break
        proj = project_to_circle(d.perforations[idx], x)
        x = 2.0 * proj - x
    cls = classify_point(d, x)
    if cls.region is not Region.INTERIOR:
        raise StepGeometryError("timestep too large for geometry")
    return x


# ---------------------------------------------------------------------------
# Numba kernel: V = 0, constant G
# ---------------------------------------------------------------------------

@numba.njit(cache=True)
def _walk_kernel(starts, streams, seed, dt, max_steps,
                 lo0, lo1, hi0, hi1,
                 centers, radii, cell_start, cell_items, ncx, ncy,
                 const_g,
                 out_pos, out_killed, out_exit, out_ig, out_elapsed, out_steps):
    n = starts.shape[0]
    sqrt_dt = math.sqrt(dt)
    w0 = hi0 - lo0
    w1 = hi1 - lo1
    n_err = 0
    for i in range(n):
        x0 = starts[i, 0]
        x1 = starts[i, 1]
        stream = streams[i]
        t_frac = 0.0  # fractional time of the killing sub-step
        killed = False
        steps = 0
        err = False
        for step in range(max_steps):
            z0, z1 = normal_pair_nb(seed, stream, numba.uint64(step))
            y0 = x0 + sqrt_dt * z0
            y1 = x1 + sqrt_dt * z1
            if y0 < lo0 or y0 > hi0 or y1 < lo1 or y1 > hi1:
                # first crossing of the segment with the rectangle boundary
                tmin = 2.0
                axis = -1
                edge = 0.0
                d0 = y0 - x0
                d1 = y1 - x1
                if d0 != 0.0:
                    for e in (lo0, hi0):
                        tt = (e - x0) / d0
                        if 0.0 < tt <= 1.0 and tt < tmin:
                            tmin = tt
                            axis = 0
                            edge = e
                if d1 != 0.0:
                    for e in (lo1, hi1):
                        tt = (e - x1) / d1
                        if 0.0 < tt <= 1.0 and tt < tmin:
                            tmin = tt
                            axis = 1
                            edge = e
                if axis >= 0:
                    e0 = x0 + tmin * d0
                    e1 = x1 + tmin * d1
                    if axis == 0:
                        e0 = edge
                    else:
                        e1 = edge
                    t_frac = tmin * dt
                    out_exit[i, 0] = e0
                    out_exit[i, 1] = e1
                    killed = True
                    break
            # perforation test on the proposed point (closed disks)
            pidx = -1
            if centers.shape[0] > 0:
                cx = int((y0 - lo0) / w0 * ncx)
                cy = int((y1 - lo1) / w1 * ncy)
                if cx < 0:
                    cx = 0
                if cx >= ncx:
                    cx = ncx - 1
                if cy < 0:
                    cy = 0
                if cy >= ncy:
                    cy = ncy - 1
                base = cx * ncy + cy
                for k in range(cell_start[base], cell_start[base + 1]):
                    j = cell_items[k]
                    ddx = y0 - centers[j, 0]
                    ddy = y1 - centers[j, 1]
                    if ddx * ddx + ddy * ddy <= radii[j] * radii[j]:
                        pidx = j
                        break
            if pidx >= 0:
                # mirror across the circle boundary
                r0 = y0
                r1 = y1
                for _ in range(1 + MAX_REFLECTIONS):
                    c0 = centers[pidx, 0]
                    c1 = centers[pidx, 1]
                    v0 = r0 - c0
                    v1 = r1 - c1
                    norm = math.sqrt(v0 * v0 + v1 * v1)
                    if norm < 1e-14:
                        err = True
                        break
                    scale = radii[pidx] / norm
                    p0 = c0 + scale * v0
                    p1 = c1 + scale * v1
                    r0 = 2.0 * p0 - r0
                    r1 = 2.0 * p1 - r1
                    # re-test
                    pidx = -1
                    cx = int((r0 - lo0) / w0 * ncx)
                    cy = int((r1 - lo1) / w1 * ncy)
                    if cx < 0:
                        cx = 0
                    if cx >= ncx:
                        cx = ncx - 1
                    if cy < 0:
                        cy = 0
                    if cy >= ncy:
                        cy = ncy - 1
                    base = cx * ncy + cy
                    for k in range(cell_start[base], cell_start[base + 1]):
                        j = cell_items[k]
                        ddx = r0 - centers[j, 0]
                        ddy = r1 - centers[j, 1]
                        if ddx * ddx + ddy * ddy <= radii[j] * radii[j]:
                            pidx = j
                            break
                    if pidx < 0:
                        break
                if err or pidx >= 0 or r0 < lo0 or r0 > hi0 or r1 < lo1 or r1 > hi1:
                    err = True
                    break
                x0 = r0
                x1 = r1
            else:
                x0 = y0
                x1 = y1
            steps += 1
        if err:
            n_err += 1
        # constant integrand: left-endpoint quadrature collapses to g * time,
        # computed from the step counter so full steps carry no round-off
        t = steps * dt + t_frac
        out_pos[i, 0] = x0
        out_pos[i, 1] = x1
        out_killed[i] = killed
        out_ig[i] = const_g * steps * dt + const_g * t_frac
        out_elapsed[i] = t
        out_steps[i] = steps
    return n_err


def _build_cell_index(d: PerforatedDomain) -> tuple:
    """Uniform-grid candidate lists: disks whose closure meets each cell."""
    P = len(d.perforations)
    lo, hi = d.rect.lo, d.rect.hi
    w0, w1 = d.rect.widths
    if P == 0:
        return (np.zeros(2, dtype=np.int64), np.zeros(0, dtype=np.int64), 1, 1)
    r_max = float(d.radii.max())
    ncx = max(1, min(64, int(w0 / (2.0 * r_max))))
    ncy = max(1, min(64, int(w1 / (2.0 * r_max))))
    cells = [[] for _ in range(ncx * ncy)]
    for j, p in enumerate(d.perforations):
        x0 = (p.center[0] - p.radius - lo[0]) / w0 * ncx
        x1 = (p.center[0] + p.radius - lo[0]) / w0 * ncx
        y0 = (p.center[1] - p.radius - lo[1]) / w1 * ncy
        y1 = (p.center[1] + p.radius - lo[1]) / w1 * ncy
        for cx in range(max(0, int(np.floor(x0))), min(ncx - 1, int(np.floor(x1))) + 1):
            for cy in range(max(0, int(np.floor(y0))), min(ncy - 1, int(np.floor(y1))) + 1):
                cells[cx * ncy + cy].append(j)
    cell_start = np.zeros(ncx * ncy + 1, dtype=np.int64)
    for c, lst in enumerate(cells):
        cell_start[c + 1] = cell_start[c] + len(lst)
    cell_items = np.fromiter((j for lst in cells for j in lst), dtype=np.int64,
                             count=int(cell_start[-1]))
    return cell_start, cell_items, ncx, ncy


def run_kernel(d: PerforatedDomain, starts: np.ndarray, streams: np.ndarray,
               seed: int, dt: float, max_steps: int, const_g: float) -> PathBatch:
    """Drift-free constant-source walkers via the compiled kernel."""
    n = starts.shape[0]
    cell_start, cell_items, ncx, ncy = _build_cell_index(d)
    out_pos = np.empty((n, 2))
    out_killed = np.zeros(n, dtype=np.bool_)
    out_exit = np.zeros((n, 2))
    out_ig = np.zeros(n)
    out_elapsed = np.zeros(n)
    out_steps = np.zeros(n, dtype=np.int64)
    lo, hi = d.rect.lo, d.rect.hi
    n_err = _walk_kernel(
        np.ascontiguousarray(starts, dtype=np.float64),
        np.ascontiguousarray(streams, dtype=np.uint64),
        np.uint64(seed), float(dt), int(max_steps),
        lo[0], lo[1], hi[0], hi[1],
        d.centers, d.radii, cell_start, cell_items, ncx, ncy,
        float(const_g),
        out_pos, out_killed, out_exit, out_ig, out_elapsed, out_steps)
    if n_err:
        raise StepGeometryError(
            f"timestep too large for geometry ({n_err} walkers failed reflection)")
    return PathBatch(out_pos, out_killed, out_exit, out_ig,
                     np.zeros(n), out_elapsed, out_steps)


# ---------------------------------------------------------------------------
# Vectorized numpy engine: general fields
# ---------------------------------------------------------------------------

def _segment_exit_vec(lo, hi, x: np.ndarray, y: np.ndarray):
    """Per-row first rectangle crossing for segments x->y known to leave."""
    n = x.shape[0]
    tmin = np.full(n, 2.0)
    axis = np.full(n, -1, dtype=np.int64)
    edge = np.zeros(n)
    d = y - x
    for ax in range(2):
        for e in (lo[ax], hi[ax]):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(d[:, ax] != 0.0, (e - x[:, ax]) / d[:, ax], np.inf)
            ok = (t > 0.0) & (t <= 1.0) & (t < tmin)
            tmin = np.where(ok, t, tmin)
            axis = np.where(ok, ax, axis)
            edge = np.where(ok, e, edge)
    exit_pt = x + tmin[:, None] * d
    for ax in range(2):
        sel = axis == ax
        exit_pt[sel, ax] = edge[sel]
    return exit_pt, tmin, axis >= 0


def simulate_paths_numpy(d: PerforatedDomain, fields: FieldSpec,
                         u_eval: Optional[Callable], starts: np.ndarray,
                         cfg: StepConfig, seed: int, streams: np.ndarray,
                         max_steps: Optional[int] = None,
                         normals: Optional[np.ndarray] = None) -> PathBatch:
    """General-field engine; one synchronized micro step at a time.

    normals, when given, has shape (max_steps, n, 2) and overrides the
    counter-based draws (test hook).
    """
    n = starts.shape[0]
    steps_total = cfg.steps_per_macro if max_steps is None else max_steps
    dt = cfg.dt_micro
    sqrt_dt = math.sqrt(dt)

    pos = np.array(starts, dtype=float)
    killed = np.zeros(n, dtype=bool)
    exit_point = np.zeros((n, 2))
    integral_G = np.zeros(n)
    log_weight = np.zeros(n)
    elapsed = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    lo, hi = d.rect.lo, d.rect.hi
    use_w = cfg.mode == "brownian_weighted" and not fields.v_is_zero

    def u_at(p, mask_count):
        if u_eval is None or not fields.depends_on_u:
            return np.zeros(mask_count)
        return np.asarray(u_eval(p))

    for step in range(steps_total):
        act = ~killed
        if not act.any():
            break
        idx = np.nonzero(act)[0]
        x = pos[idx]
        if normals is not None:
            z = normals[step, idx]
        else:
            z = normal_pairs(seed, streams[idx], step)
        u_left = u_at(x, idx.size)
        g_left = np.asarray(fields.G(x, u_left), dtype=float)
        if fields.v_is_zero:
            v_left = None
            y = x + sqrt_dt * z
        else:
            v_left = np.asarray(fields.V(x, u_left), dtype=float)
            drift = v_left * dt if cfg.mode == "drifted" else 0.0
            y = x + drift + sqrt_dt * z

        out = ((y[:, 0] < lo[0]) | (y[:, 0] > hi[0])
               | (y[:, 1] < lo[1]) | (y[:, 1] > hi[1]))
        if out.any():
            exi, alpha, got = _segment_exit_vec(lo, hi, x[out], y[out])
            if not got.all():
                raise StepGeometryError("walker left the rectangle without a crossing")
            sub = idx[out]
            exit_point[sub] = exi
            integral_G[sub] += g_left[out] * alpha * dt
            if use_w:
                vl = v_left[out]
                log_weight[sub] += np.einsum("ij,ij->i", vl, exi - x[out])
                log_weight[sub] -= 0.5 * np.einsum("ij,ij->i", vl, vl) * alpha * dt
            elapsed[sub] += alpha * dt
            killed[sub] = True

        ins = ~out
        if ins.any():
            sub = idx[ins]
            xi = x[ins]
            yi = y[ins]
            gi = g_left[ins]
            vi = v_left[ins] if v_left is not None else None
            # perforation membership (closed disks)
            pidx = np.full(sub.size, -1, dtype=np.int64)
            for j in range(len(d.perforations)):
                c = d.centers[j]
                r = d.radii[j]
                dx = yi[:, 0] - c[0]
                dy = yi[:, 1] - c[1]
                hit = (pidx < 0) & (dx * dx + dy * dy <= r * r)
                pidx[hit] = j
            refl = pidx >= 0
            if refl.any():
                rsub = np.nonzero(refl)[0]
                for k in rsub:
                    perf = d.perforations[pidx[k]]
                    yk = yi[k]
                    proj = project_to_circle(perf, yk)
                    beta = _reflection_fraction(xi[k], proj, yk)
                    xr = _settle_reflections(d, 2.0 * proj - yk)
                    u_p = u_at(proj.reshape(1, 2), 1)
                    g_proj = float(np.asarray(fields.G(proj.reshape(1, 2), u_p))[0])
                    w = sub[k]
                    integral_G[w] += accumulate_source(float(gi[k]), g_proj, beta, dt)
                    if use_w:
                        v_proj = np.asarray(fields.V(proj.reshape(1, 2), u_p)).reshape(2)
                        log_weight[w] += accumulate_girsanov(vi[k], v_proj, xi[k],
                                                             proj, yk, reflected=True)
                        vsq = accumulate_source(float(np.dot(vi[k], vi[k])),
                                                float(np.dot(v_proj, v_proj)), beta, dt)
                        log_weight[w] -= 0.5 * vsq
                    pos[w] = xr
            plain = ~refl
            if plain.any():
                w = sub[plain]
                pos[w] = yi[plain]
                integral_G[w] += gi[plain] * dt
                if use_w:
                    vl = vi[plain]
                    log_weight[w] += np.einsum("ij,ij->i", vl, yi[plain] - xi[plain])
                    log_weight[w] -= 0.5 * np.einsum("ij,ij->i", vl, vl) * dt
            elapsed[sub] += dt
            steps[sub] += 1

    return PathBatch(pos, killed, exit_point, integral_G, log_weight, elapsed, steps)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def simulate_paths(d: PerforatedDomain, fields: FieldSpec,
                   u_eval: Optional[Callable], starts: np.ndarray,
                   n_walkers_each: int, cfg: StepConfig, seed: int,
                   stream_base: int = 0) -> PathBatch:
    """Evolve n_walkers_each walkers from every start for one macro step.

    Walker (i, j) uses counter stream stream_base + i * n_walkers_each + j, so
    results are independent of batching.  Fast kernel when V is zero and G is
    a known constant; numpy engine otherwise.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n_starts = starts.shape[0]
    n = n_starts * n_walkers_each
    if n == 0:
        empty = np.zeros((0, 2))
        z = np.zeros(0)
        return PathBatch(empty, np.zeros(0, dtype=bool), empty.copy(), z, z.copy(),
                         z.copy(), np.zeros(0, dtype=np.int64))
    mean_step, ok = check_timestep(cfg.dt_micro, d.min_radius) \
        if len(d.perforations) else (KAPPA_2D * math.sqrt(cfg.dt_micro), True)
    if not ok:
        raise TimestepError(
            f"mean step {mean_step:.3g} too large for min radius {d.min_radius:.3g}")
    expanded = np.repeat(starts, n_walkers_each, axis=0)
    streams = stream_base + np.arange(n, dtype=np.uint64)
    if fields.v_is_zero and fields.g_const is not None and not fields.g_depends_u:
        return run_kernel(d, expanded, streams, seed, cfg.dt_micro,
                          cfg.steps_per_macro, fields.g_const)
    return simulate_paths_numpy(d, fields, u_eval, expanded, cfg, seed, streams)
