"""Command-line interface: subcommands, artifacts, exit codes."""

import json

import numpy as np
import pytest

from perfsolve import cli
from perfsolve.geometry import PerforatedDomain, Perforation, Rect
from perfsolve.homog import import_field
from perfsolve.network import NetworkConfig, constant_network

TINY = """
[domain]
lo = [-0.5, -0.5]
hi = [0.5, 0.5]
perforations = [{ center = [0.0, 0.0], radius = 0.4 }]

[equation]
V = ["0", "0"]
G = "-1"
g = "1"

[network]
fourier_pairs = 8
sigma2 = 1.0
hidden = [16]

[training]
dt_micro = 1e-4
steps_per_macro = 8
n_collocation = 20
n_walkers = 10
iterations = 3
seed = 0
checkpoint_every = 2

[oracle]
n_walkers = 2000
dt_micro = 1e-4
"""


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


class TestTrain:
    def test_train_produces_artifacts(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli.main(["train", "--config", str(tiny_config), "--out", str(out)])
        assert code == 0
        assert (out / "metrics.jsonl").exists()
        assert (out / "final.bin").exists()
        assert (out / "ckpt_0000002.bin").exists()
        status = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert status["status"] == "ok"

    def test_same_seed_byte_identical(self, tiny_config, tmp_path):
        outs = []
        for k in range(2):
            out = tmp_path / f"run{k}"
            assert cli.main(["train", "--config", str(tiny_config),
                             "--out", str(out)]) == 0
            outs.append(out)
        a, b = outs
        assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
        assert (a / "final.bin").read_bytes() == (b / "final.bin").read_bytes()

    def test_iteration_and_seed_overrides(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["train", "--config", str(tiny_config), "--out", str(out),
                         "--iterations", "1", "--seed", "7"]) == 0
        lines = (out / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 1

    def test_timing_flag(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["train", "--config", str(tiny_config), "--out", str(out),
                         "--iterations", "1", "--timing"]) == 0
        record = json.loads((out / "metrics.jsonl").read_text())
        assert "wall_ms" in record


class TestEvaluate:
    def test_grid_export_and_masking(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        cli.main(["train", "--config", str(tiny_config), "--out", str(out),
                  "--iterations", "1"])
        grid_csv = tmp_path / "grid.csv"
        code = cli.main(["evaluate", "--config", str(tiny_config),
                         "--checkpoint", str(out / "final.bin"),
                         "--grid", "101", "--out", str(grid_csv)])
        assert code == 0
        field, rect = import_field(grid_csv)
        assert field.n == 101
        assert rect == Rect((-0.5, -0.5), (0.5, 0.5))
        # mask is false exactly at lattice points strictly inside the disk
        x = np.linspace(-0.5, 0.5, 101)
        X, Y = np.meshgrid(x, x, indexing="ij")
        expected = X**2 + Y**2 >= 0.4**2
        assert np.array_equal(field.mask, expected)
        assert (~field.mask).sum() > 0

    def test_export_grid_values_match_network(self):
        d = PerforatedDomain(Rect((-0.5, -0.5), (0.5, 0.5)),
                             [Perforation((0.0, 0.0), 0.4)])
        net = constant_network(NetworkConfig(4, 1.0, (8,)), 0, 3.0)
        field = cli.export_grid(net, d, 21)
        assert np.all(field.values == 3.0)


class TestOracle:
    def test_ring_probes_output(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "oracle.json"
        code = cli.main(["oracle", "--config", str(tiny_config), "--ring", "4",
                         "--walkers", "500", "--out", str(out)])
        assert code == 0
        records = json.loads(out.read_text())
        assert len(records) >= 3
        for r in records:
            assert set(r) == {"point", "mean", "stderr", "n", "mean_exit_time"}
            assert r["mean"] > 1.0  # G = -1 source raises u above the boundary value

    def test_points_file(self, tiny_config, tmp_path):
        pts = tmp_path / "pts.csv"
        pts.write_text("0.45,0.0\n")
        out = tmp_path / "oracle.json"
        assert cli.main(["oracle", "--config", str(tiny_config),
                         "--points", str(pts), "--walkers", "200",
                         "--out", str(out)]) == 0
        records = json.loads(out.read_text())
        assert records[0]["point"] == [0.45, 0.0]


class TestCompare:
    def test_self_compare_zero(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "run"
        cli.main(["train", "--config", str(tiny_config), "--out", str(out),
                  "--iterations", "1"])
        grid_csv = tmp_path / "grid.csv"
        cli.main(["evaluate", "--config", str(tiny_config),
                  "--checkpoint", str(out / "final.bin"),
                  "--grid", "21", "--out", str(grid_csv)])
        capsys.readouterr()
        code = cli.main(["compare", "--a", str(grid_csv), "--b", str(grid_csv)])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["relative_l2"] == 0.0


class TestHomogenize:
    CONFIG = """
[domain]
lo = [-0.5, -0.5]
hi = [0.5, 0.5]

[domain.lattice]
nx = 4
ny = 4
radius = 0.05

[equation]
V = ["0", "0"]
G = "-1"
g = "1"

[network]
fourier_pairs = 8
sigma2 = 1.0
hidden = [16]

[training]
dt_micro = 1e-5
steps_per_macro = 8
n_collocation = 10
n_walkers = 10
iterations = 1
"""

    def test_homogenize_outputs(self, tmp_path, capsys):
        cfg = tmp_path / "lattice.toml"
        cfg.write_text(self.CONFIG)
        out = tmp_path / "homog"
        code = cli.main(["homogenize", "--config", str(cfg),
                         "--resolution", "64", "--grid", "41",
                         "--out", str(out)])
        assert code == 0
        record = json.loads((tmp_path / "homog.json").read_text())
        tensor = np.array(record["tensor"])
        assert tensor.shape == (2, 2)
        assert 0.7 < tensor[0, 0] < 1.0  # modest obstruction, below unity
        field, _ = import_field(tmp_path / "homog.csv")
        assert field.values.min() >= 1.0 - 1e-9  # G = -1: u stays above g = 1

    def test_requires_lattice(self, tiny_config, tmp_path, capsys):
        code = cli.main(["homogenize", "--config", str(tiny_config),
                         "--out", str(tmp_path / "h")])
        assert code == cli.EXIT_CONFIG
        err = json.loads(capsys.readouterr().err)
        assert err["status"] == "error"


class TestErrorPaths:
    def test_invalid_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text(TINY.replace('G = "-1"', 'G = "x9"'))
        code = cli.main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_CONFIG
        err = json.loads(capsys.readouterr().err)
        assert err["kind"] == "config"
        assert any("x9" in e for e in err["detail"]["errors"])

    def test_missing_config_file(self, tmp_path, capsys):
        code = cli.main(["train", "--config", str(tmp_path / "nope.toml"),
                         "--out", str(tmp_path / "o")])
        assert code == cli.EXIT_CONFIG

    def test_oracle_numerical_error(self, tiny_config, tmp_path, capsys):
        pts = tmp_path / "pts.csv"
        pts.write_text("0.45,0.0\n")
        out = tmp_path / "oracle.json"
        code = cli.main(["oracle", "--config", str(tiny_config),
                        "--points", str(pts), "--walkers", "100",
                         "--dt", "0.05", "--out", str(out)])
        assert code == cli.EXIT_NUMERICAL
        err = json.loads(capsys.readouterr().err)
        assert err["kind"] == "numerical"
