"""Homogenization: cell problem, effective tensor, constant-coefficient solve."""

import numpy as np
import pytest

from perfsolve.geometry import Perforation, Rect
from perfsolve.homog import (
    CellGeometry,
    EffectiveTensor,
    GridField,
    export_field,
    effective_tensor,
    import_field,
    relative_l2,
    solve_cell_problem,
    solve_homogenized,
)

PAPER_CELL = CellGeometry(Perforation((0.0, 0.0), 2.0 / 7.0))
TINY_CELL = CellGeometry(Perforation((0.0, 0.0), 1e-9))


def cell_residual(corr, xi):
    """Independent finite-volume residual of the discrete cell problem."""
    N = corr.values
    n = corr.n
    h = 1.0 / n
    k = corr.mask.astype(float)
    kl = np.roll(k, 1, axis=0)
    kx = np.where((k > 0) & (kl > 0), 1.0, 0.0)
    kd = np.roll(k, 1, axis=1)
    ky = np.where((k > 0) & (kd > 0), 1.0, 0.0)
    kxr = np.roll(kx, -1, axis=0)
    kyu = np.roll(ky, -1, axis=1)
    flux_r = kxr * (xi[0] * h + np.roll(N, -1, axis=0) - N)
    flux_l = kx * (xi[0] * h + N - np.roll(N, 1, axis=0))
    flux_u = kyu * (xi[1] * h + np.roll(N, -1, axis=1) - N)
    flux_d = ky * (xi[1] * h + N - np.roll(N, 1, axis=1))
    return flux_r - flux_l + flux_u - flux_d


class TestCellProblem:
    def test_empty_perforation_zero_corrector(self):
        corr = solve_cell_problem(TINY_CELL, (1.0, 0.0), 32)
        assert corr.mask.all()
        assert np.max(np.abs(corr.values)) < 1e-12

    def test_corrector_symmetry(self):
        # xi = e1 on the centered disk: antisymmetric in x1, symmetric in x2
        corr = solve_cell_problem(PAPER_CELL, (1.0, 0.0), 64)
        N = corr.values
        assert np.max(np.abs(N + N[::-1, :])) < 1e-8
        assert np.max(np.abs(N - N[:, ::-1])) < 1e-8

    def test_discrete_residual_small(self):
        xi = (1.0, 0.0)
        corr = solve_cell_problem(PAPER_CELL, xi, 64)
        res = cell_residual(corr, xi)
        scale = 1.0 / corr.n  # forcing entries are O(h)
        assert np.max(np.abs(res)) < 1e-9 * scale / 1e-2

    def test_mean_zero_gauge(self):
        corr = solve_cell_problem(PAPER_CELL, (0.0, 1.0), 64)
        assert abs(corr.values[corr.mask].mean()) < 1e-12

    def test_resolution_floor(self):
        with pytest.raises(ValueError):
            solve_cell_problem(PAPER_CELL, (1.0, 0.0), 16)

    def test_cell_containment_enforced(self):
        with pytest.raises(ValueError):
            CellGeometry(Perforation((0.3, 0.0), 0.25))


class TestEffectiveTensor:
    def test_no_perforation_identity(self):
        t = effective_tensor(TINY_CELL, 32)
        assert np.array_equal(t.a, np.eye(2))

    def test_quarter_symmetry(self):
        t = effective_tensor(PAPER_CELL, 64)
        assert abs(t.a[0, 0] - t.a[1, 1]) < 1e-6
        assert abs(t.a[0, 1]) < 1e-10

    def test_eigenvalues_in_unit_interval(self):
        t = effective_tensor(PAPER_CELL, 64)
        ev = np.linalg.eigvalsh(t.a)
        assert ev.min() > 0 and ev.max() <= 1.0

    def test_grid_convergence_monotone(self, paper_cell_tensors):
        a128 = paper_cell_tensors[128].a
        a256 = paper_cell_tensors[256].a
        a512 = paper_cell_tensors[512].a
        assert np.max(np.abs(a512 - a256)) < np.max(np.abs(a256 - a128))

    def test_rotational_covariance_off_center(self):
        # rotating the cell by 90 degrees conjugates the tensor by the rotation
        c = CellGeometry(Perforation((0.1, 0.05), 0.2))
        c_rot = CellGeometry(Perforation((-0.05, 0.1), 0.2))
        R = np.array([[0.0, -1.0], [1.0, 0.0]])
        a = effective_tensor(c, 128).a
        b = effective_tensor(c_rot, 128).a
        assert np.allclose(b, R @ a @ R.T, atol=1e-10)

    def test_validation_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            EffectiveTensor(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_validation_rejects_bad_eigenvalues(self):
        with pytest.raises(ValueError, match="eigenvalues"):
            EffectiveTensor(np.array([[1.5, 0.0], [0.0, 0.5]]))
        with pytest.raises(ValueError, match="eigenvalues"):
            EffectiveTensor(np.array([[-0.5, 0.0], [0.0, 0.5]]))


class TestSolveHomogenized:
    RECT = Rect((-0.5, -0.5), (0.5, 0.5))

    def test_constant_solution(self):
        t = EffectiveTensor(np.eye(2))
        u = solve_homogenized(t, lambda p: np.zeros(p.shape[0]),
                              lambda p: np.ones(p.shape[0]), self.RECT, 41)
        assert np.max(np.abs(u.values - 1.0)) < 1e-9

    def test_maximum_principle_and_symmetry(self):
        t = EffectiveTensor(0.8 * np.eye(2))
        u = solve_homogenized(t, lambda p: np.full(p.shape[0], -2.0),
                              lambda p: np.ones(p.shape[0]), self.RECT, 41)
        v = u.values
        assert v.min() >= 1.0 - 1e-9
        assert np.max(np.abs(v - v[::-1, :])) < 1e-8
        assert np.max(np.abs(v - v.T)) < 1e-8

    def test_manufactured_quadratic_exact(self):
        # u = x^2 + x y + y^2 is reproduced to solver tolerance when G and g
        # are manufactured from it (stencil is exact on quadratics)
        t = EffectiveTensor(np.eye(2))
        exact = lambda p: p[:, 0] ** 2 + p[:, 0] * p[:, 1] + p[:, 1] ** 2
        G = lambda p: np.full(p.shape[0], 4.0)  # div(grad u)
        u = solve_homogenized(t, G, exact, self.RECT, 33)
        x = np.linspace(-0.5, 0.5, 33)
        X, Y = np.meshgrid(x, x, indexing="ij")
        ref = X**2 + X * Y + Y**2
        assert np.max(np.abs(u.values - ref)) < 1e-8

    def test_cross_term_quadratic_exact(self):
        # full tensor with off-diagonal entries, manufactured from u = x y
        t = EffectiveTensor(np.array([[0.8, 0.15], [0.15, 0.8]]))
        exact = lambda p: p[:, 0] * p[:, 1]
        # div(A grad u) = 2 a01 * d2u/dxdy = 0.3
        G = lambda p: np.full(p.shape[0], 0.3)
        u = solve_homogenized(t, G, exact, self.RECT, 33)
        x = np.linspace(-0.5, 0.5, 33)
        X, Y = np.meshgrid(x, x, indexing="ij")
        assert np.max(np.abs(u.values - X * Y)) < 1e-8

    def test_second_order_convergence(self):
        t = EffectiveTensor(np.eye(2))
        G = lambda p: np.cos(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1])
        g = lambda p: np.zeros(p.shape[0])
        sols = {n: solve_homogenized(t, G, g, self.RECT, n) for n in (26, 51, 101)}
        # node i of the n-grid coincides with node 2i of the (2n-1)-grid
        e1 = np.max(np.abs(sols[26].values - sols[51].values[::2, ::2]))
        e2 = np.max(np.abs(sols[51].values - sols[101].values[::2, ::2]))
        assert e1 / e2 == pytest.approx(4.0, rel=0.3)


class TestRelativeL2:
    def _field(self, values, mask=None):
        n = values.shape[0]
        if mask is None:
            mask = np.ones((n, n), dtype=bool)
        return GridField(n=n, values=values, mask=mask)

    def test_identical_fields(self):
        u = self._field(np.random.default_rng(0).normal(size=(8, 8)))
        assert relative_l2(u, u) == 0.0

    def test_double_field(self):
        u = self._field(np.random.default_rng(1).normal(size=(8, 8)))
        v = self._field(2 * u.values)
        assert relative_l2(u, v) == pytest.approx(1.0)

    def test_constant_offset(self):
        u = self._field(np.ones((8, 8)))
        v = self._field(np.full((8, 8), 1.001))
        assert relative_l2(u, v) == pytest.approx(1e-3)

    def test_mask_intersection(self):
        vals = np.ones((4, 4))
        bad = vals.copy()
        bad[0, 0] = 100.0
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        assert relative_l2(self._field(vals), self._field(bad, mask)) == 0.0

    def test_resolution_mismatch(self):
        with pytest.raises(ValueError):
            relative_l2(self._field(np.ones((4, 4))), self._field(np.ones((5, 5))))

    def test_zero_norm(self):
        with pytest.raises(ValueError):
            relative_l2(self._field(np.zeros((4, 4))), self._field(np.ones((4, 4))))


class TestExportImport:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        field = GridField(n=6, values=rng.normal(size=(6, 6)),
                          mask=rng.random((6, 6)) > 0.3)
        rect = Rect((-0.5, -0.5), (0.5, 0.5))
        csv_path = tmp_path / "field.csv"
        sidecar = tmp_path / "field.csv.json"
        export_field(field, rect, csv_path, sidecar)
        assert csv_path.read_text().splitlines()[0] == "x1,x2,value,mask"
        loaded, loaded_rect = import_field(csv_path)
        assert loaded.n == 6
        assert np.array_equal(loaded.values, field.values)
        assert np.array_equal(loaded.mask, field.mask)
        assert loaded_rect == rect

    def test_import_rejects_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            import_field(p)
