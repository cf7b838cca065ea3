"""Finite-difference homogenization toolkit.

Cell problem: finite-volume discretization of div(k (xi + grad N)) = 0 on the
periodic unit cell with k the 0/1 indicator of the material (harmonic face
averaging makes perforation-adjacent faces no-flux, which realizes the
homogeneous Neumann condition without body-fitted meshing).  The effective
tensor averages the corrected flux over the material region.

Homogenized solve: 9-point discretization of div(A grad u) = G with Dirichlet
data on the rectangle.  Both solves use conjugate gradients to a relative
residual of 1e-10.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .geometry import Perforation, Rect

CG_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class CellGeometry:
    """One perforation scaled into the unit cell [-1/2, 1/2]^2."""

    perforation: Perforation

    def __post_init__(self):
        c, r = self.perforation.center, self.perforation.radius
        if max(abs(c[0]), abs(c[1])) + r >= 0.5:
            raise ValueError("perforation closure must lie strictly inside the cell")


@dataclass
class GridField:
    n: int
    values: np.ndarray          # (n, n), index [i, j] = (x1_i, x2_j)
    mask: np.ndarray            # (n, n) bool, True = material

    def __post_init__(self):
        if self.values.shape != (self.n, self.n) or self.mask.shape != (self.n, self.n):
            raise ValueError("GridField arrays must be n-by-n")


@dataclass(frozen=True)
class EffectiveTensor:
    a: np.ndarray  # (2, 2)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.shape != (2, 2):
            raise ValueError("effective tensor must be 2x2")
        if abs(a[0, 1] - a[1, 0]) > 1e-8:
            raise ValueError("effective tensor must be symmetric")
        ev = np.linalg.eigvalsh(0.5 * (a + a.T))
        if ev.min() <= 0 or ev.max() > 1 + 1e-8:
            raise ValueError(f"effective tensor eigenvalues {ev} outside (0, 1]")
        object.__setattr__(self, "a", a)


def _cell_mask(cell: CellGeometry, n: int) -> np.ndarray:
    """True on material cells (cell-centered indicator on the unit cell)."""
    h = 1.0 / n
    x = -0.5 + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    c, r = cell.perforation.center, cell.perforation.radius
    return (X - c[0]) ** 2 + (Y - c[1]) ** 2 > r * r


def _cg_solve(A, b, x0=None, maxiter=None, rtol=CG_RTOL):
    x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise SolverError(f"conjugate gradients failed to converge (info={info})")
    return x


def solve_cell_problem(cell: CellGeometry, xi, n: int) -> GridField:
    """Mean-zero periodic corrector for unit direction xi at resolution n."""
    if n < 32:
        raise ValueError("resolution must be at least 32")
    xi = np.asarray(xi, dtype=float).reshape(2)
    h = 1.0 / n
    mask = _cell_mask(cell, n)
    k = mask.astype(float)

    # face conductivities: harmonic average of the 0/1 cell indicator
    kx = np.zeros((n, n))  # face between (i-1, j) and (i, j), periodic in i
    ky = np.zeros((n, n))
    kl = np.roll(k, 1, axis=0)
    kx = np.where((k > 0) & (kl > 0), 2.0 * k * kl / (k + kl + 1e-300), 0.0)
    kd = np.roll(k, 1, axis=1)
    ky = np.where((k > 0) & (kd > 0), 2.0 * k * kd / (k + kd + 1e-300), 0.0)

    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []
    b = np.zeros(n * n)

    # flux across an x-face: k_f * (xi_0 + (N_i - N_{i-1}) / h) * h
    # divergence per cell: sum of outgoing fluxes = 0
    def add(i_arr, j_arr, coeff):
        rows.append(i_arr.ravel())
        cols.append(j_arr.ravel())
        vals.append(coeff.ravel())

    left = np.roll(idx, 1, axis=0)
    right = np.roll(idx, -1, axis=0)
    down = np.roll(idx, 1, axis=1)
    up = np.roll(idx, -1, axis=1)
    kxr = np.roll(kx, -1, axis=0)  # face between (i, j) and (i+1, j)
    kyu = np.roll(ky, -1, axis=1)

    diag = kx + kxr + ky + kyu
    add(idx, idx, diag)
    add(idx, left, -kx)
    add(idx, right, -kxr)
    add(idx, down, -ky)
    add(idx, up, -kyu)
    # RHS: -div(k xi); the h factor keeps units consistent with the
    # (N_j - N_i) flux terms above
    b = h * ((kxr - kx) * xi[0] + (kyu - ky) * xi[1])
    b = b.ravel()

    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))
    # singular consistent system (constants in the null space on each
    # connected component); CG stays in range(A) for b orthogonal to it
    x = _cg_solve(A, b, maxiter=50 * n)
    N = x.reshape(n, n)
    N = np.where(mask, N, 0.0)
    m = mask.sum()
    N = np.where(mask, N - N[mask].sum() / m, 0.0)
    return GridField(n=n, values=N, mask=mask)


def effective_tensor(cell: CellGeometry, n: int) -> EffectiveTensor:
    """Homogenized 2x2 tensor from the two coordinate-direction correctors.

    Columns are averages of the corrected flux k (xi + grad N), normalized by
    the material area of the cell; insulating inclusions therefore keep the
    eigenvalues in (0, 1].
    """
    a = np.zeros((2, 2))
    h = 1.0 / n
    for col, xi in enumerate(np.eye(2)):
        corr = solve_cell_problem(cell, xi, n)
        N = corr.values
        k = corr.mask.astype(float)
        material = k.sum()
        kl = np.roll(k, 1, axis=0)
        kx = np.where((k > 0) & (kl > 0), 1.0, 0.0)
        kd = np.roll(k, 1, axis=1)
        ky = np.where((k > 0) & (kd > 0), 1.0, 0.0)
        # average x-flux over x-faces, y-flux over y-faces
        dNx = (N - np.roll(N, 1, axis=0)) / h
        dNy = (N - np.roll(N, 1, axis=1)) / h
        flux_x = kx * (xi[0] + dNx)
        flux_y = ky * (xi[1] + dNy)
        a[0, col] = flux_x.sum() / material
        a[1, col] = flux_y.sum() / material
    # clean numerical asymmetry before constructing the validated tensor
    a = 0.5 * (a + a.T)
    return EffectiveTensor(a=a)


def solve_homogenized(a0: EffectiveTensor, G, g, rect: Rect, n: int) -> GridField:
    """Dirichlet solve of div(A grad u) = G on an n-by-n node lattice.

    G and g are vectorized callables of (n, 2) point arrays.  The 9-point
    stencil carries the cross-derivative term of a full tensor.
    """
    a = a0.a
    lo, hi = rect.lo, rect.hi
    x1 = np.linspace(lo[0], hi[0], n)
    x2 = np.linspace(lo[1], hi[1], n)
    h1 = x1[1] - x1[0]
    h2 = x2[1] - x2[0]
    X, Y = np.meshgrid(x1, x2, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    u = np.zeros((n, n))
    gv = np.asarray(g(pts)).reshape(n, n)
    u[0, :], u[-1, :] = gv[0, :], gv[-1, :]
    u[:, 0], u[:, -1] = gv[:, 0], gv[:, -1]
    Gv = np.asarray(G(pts)).reshape(n, n)

    ni = n - 2
    if ni < 1:
        raise ValueError("grid too coarse")
    idx = -np.ones((n, n), dtype=np.int64)
    idx[1:-1, 1:-1] = np.arange(ni * ni).reshape(ni, ni)

    c_xx = a[0, 0] / h1**2
    c_yy = a[1, 1] / h2**2
    c_xy = 2.0 * a[0, 1] / (4.0 * h1 * h2)

    stencil = [((1, 0), c_xx), ((-1, 0), c_xx), ((0, 1), c_yy), ((0, -1), c_yy),
               ((1, 1), c_xy), ((-1, -1), c_xy), ((1, -1), -c_xy), ((-1, 1), -c_xy)]
    diag = -2.0 * (c_xx + c_yy)

    rows, cols, vals = [], [], []
    b = Gv[1:-1, 1:-1].astype(float).copy()
    I, J = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    me = idx[1:-1, 1:-1]
    rows.append(me.ravel())
    cols.append(me.ravel())
    vals.append(np.full(ni * ni, diag))
    for (di, dj), c in stencil:
        if c == 0.0:
            continue
        nb = idx[1 + di:n - 1 + di, 1 + dj:n - 1 + dj]
        interior = nb >= 0
        rows.append(me[interior].ravel())
        cols.append(nb[interior].ravel())
        vals.append(np.full(int(interior.sum()), c))
        # boundary neighbors fold into the right-hand side
        bv = u[1 + di:n - 1 + di, 1 + dj:n - 1 + dj]
        b[~interior] -= c * bv[~interior]

    A = sp.csr_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(ni * ni, ni * ni))
    # solve the negated (positive definite) system with CG
    x = _cg_solve(-A, -b.ravel(), maxiter=max(50 * n, 2000))
    u[1:-1, 1:-1] = x.reshape(ni, ni)
    return GridField(n=n, values=u, mask=np.ones((n, n), dtype=bool))


def relative_l2(u: GridField, v: GridField) -> float:
    """Masked relative L2 difference ||u - v|| / ||u||.

    Uses the intersection of the two masks; resolutions must agree.
    """
    if u.n != v.n:
        raise ValueError("resolution mismatch")
    m = u.mask & v.mask
    denom = math.sqrt(float(np.sum(u.values[m] ** 2)))
    if denom == 0.0:
        raise ValueError("reference field has zero norm on the mask")
    return math.sqrt(float(np.sum((u.values[m] - v.values[m]) ** 2))) / denom


# ---------------------------------------------------------------------------
# CSV export/import: header "x1,x2,value,mask" plus a JSON sidecar with the
# resolution and bounds.
# ---------------------------------------------------------------------------

def export_field(field: GridField, rect: Rect, csv_path, sidecar_path=None) -> None:
    n = field.n
    x1 = np.linspace(rect.lo[0], rect.hi[0], n)
    x2 = np.linspace(rect.lo[1], rect.hi[1], n)
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x1", "x2", "value", "mask"])
        for i in range(n):
            for j in range(n):
                w.writerow([repr(float(x1[i])), repr(float(x2[j])),
                            repr(float(field.values[i, j])),
                            int(field.mask[i, j])])
    if sidecar_path is not None:
        with open(sidecar_path, "w") as f:
            json.dump({"n": n, "lo": list(rect.lo), "hi": list(rect.hi)}, f,
                      sort_keys=True)
            f.write("\n")


def import_field(csv_path) -> tuple[GridField, Rect]:
    with open(csv_path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["x1", "x2", "value", "mask"]:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [(float(a), float(b), float(v), bool(int(m))) for a, b, v, m in r]
    n = int(round(math.sqrt(len(rows))))
    if n * n != len(rows):
        raise ValueError("CSV does not contain a square grid")
    values = np.array([v for _, _, v, _ in rows]).reshape(n, n)
    mask = np.array([m for _, _, _, m in rows]).reshape(n, n)
    xs = np.array([a for a, _, _, _ in rows]).reshape(n, n)
    ys = np.array([b for _, b, _, _ in rows]).reshape(n, n)
    rect = Rect((xs[0, 0], ys[0, 0]), (xs[-1, 0], ys[0, -1]))
    return GridField(n=n, values=values, mask=mask), rect
