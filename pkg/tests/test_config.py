"""Config parsing: bundled experiment files and validation aggregation."""

from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from perfsolve.config import ConfigError, build_field_spec, parse_config

CONFIG_DIR = Path(str(resources.files("perfsolve") / "configs"))


def write_config(tmp_path, body):
    p = tmp_path / "exp.toml"
    p.write_text(body)
    return p


MINIMAL = """
[domain]
lo = [-0.5, -0.5]
hi = [0.5, 0.5]
perforations = [{{ center = [0.0, 0.0], radius = {radius} }}]

[equation]
V = ["0", "0"]
G = "-1"
g = "1"

[network]
fourier_pairs = 8
sigma2 = 1.0
hidden = [16]

[training]
dt_micro = {dt}
steps_per_macro = 16
n_collocation = 10
n_walkers = 10
iterations = 2
"""


class TestBundledConfigs:
    def test_exp1_valid(self):
        cfg = parse_config(CONFIG_DIR / "exp1.toml")
        assert len(cfg.domain.perforations) == 1
        assert cfg.domain.perforations[0].radius == 0.4
        assert cfg.net.fourier_pairs == 100
        assert cfg.net.sigma2 == 9.0
        assert cfg.net.hidden_dims == (200, 200, 200)
        assert cfg.n_collocation == 3000
        assert cfg.n_walkers == 400
        assert cfg.step.dt_micro == 5e-6
        assert cfg.step.steps_per_macro == 128
        assert cfg.alpha0 == 1e-3 and cfg.gamma == 0.9
        assert cfg.fields.g_const == -1.0
        assert cfg.fields.v_is_zero

    def test_exp2_valid(self):
        cfg = parse_config(CONFIG_DIR / "exp2.toml")
        assert len(cfg.domain.perforations) == 10
        radii = sorted(p.radius for p in cfg.domain.perforations)
        assert radii[0] == 0.02 and radii[-1] == 0.2

    def test_exp3_valid(self):
        cfg = parse_config(CONFIG_DIR / "exp3.toml")
        assert len(cfg.domain.perforations) == 400
        assert cfg.domain.min_radius == pytest.approx(1.0 / 70.0)
        assert cfg.net.activation == "relu"
        assert cfg.lattice == (20, 20, pytest.approx(1.0 / 70.0))

    def test_bundled_boundary_data(self):
        cfg = parse_config(CONFIG_DIR / "exp1.toml")
        pts = np.array([[0.5, 0.0], [-0.5, 0.3]])
        assert np.array_equal(cfg.g(pts), np.ones(2))
        assert np.array_equal(cfg.fields.G(pts, np.zeros(2)), -np.ones(2))


class TestValidation:
    def test_timestep_failure(self, tmp_path):
        p = write_config(tmp_path, MINIMAL.format(radius=0.014, dt=1e-2))
        with pytest.raises(ConfigError, match="timestep check failed"):
            parse_config(p)

    def test_valid_minimal(self, tmp_path):
        p = write_config(tmp_path, MINIMAL.format(radius=0.4, dt=1e-5))
        cfg = parse_config(p)
        assert cfg.iterations == 2

    def test_errors_aggregate(self, tmp_path):
        body = MINIMAL.format(radius=0.014, dt=1e-2)
        body = body.replace('G = "-1"', 'G = "x9 + 1"')
        body = body.replace('radius = 0.014 }', 'radius = 0.014 }, '
                            '{ center = [0.6, 0.0], radius = 0.1 }')
        p = write_config(tmp_path, body)
        with pytest.raises(ConfigError) as exc:
            parse_config(p)
        messages = "\n".join(exc.value.errors)
        assert "timestep check failed" in messages
        assert "unknown identifier x9" in messages
        assert "protrudes(1)" in messages

    def test_overlapping_perforations(self, tmp_path):
        body = MINIMAL.format(radius=0.3, dt=1e-5)
        body = body.replace('radius = 0.3 }', 'radius = 0.3 }, '
                            '{ center = [0.2, 0.0], radius = 0.3 }')
        with pytest.raises(ConfigError, match=r"overlap\(0,1\)"):
            parse_config(write_config(tmp_path, body))

    def test_unknown_mode(self, tmp_path):
        body = MINIMAL.format(radius=0.4, dt=1e-5)
        body = body.replace('[equation]', '[equation]\nmode = "levy"')
        with pytest.raises(ConfigError, match="unknown mode"):
            parse_config(write_config(tmp_path, body))

    def test_bad_toml_syntax(self, tmp_path):
        p = tmp_path / "broken.toml"
        p.write_text("[domain\nlo = ")
        with pytest.raises(ConfigError, match="TOML syntax"):
            parse_config(p)

    def test_missing_sections(self, tmp_path):
        p = tmp_path / "empty.toml"
        p.write_text("")
        with pytest.raises(ConfigError) as exc:
            parse_config(p)
        joined = " ".join(exc.value.errors)
        for section in ("domain", "equation", "network", "training"):
            assert f"[{section}]" in joined

    def test_nonpositive_training_counts(self, tmp_path):
        body = MINIMAL.format(radius=0.4, dt=1e-5)
        body = body.replace("n_collocation = 10", "n_collocation = 0")
        with pytest.raises(ConfigError, match="n_collocation"):
            parse_config(write_config(tmp_path, body))

    def test_expression_not_finite_at_center(self, tmp_path):
        body = MINIMAL.format(radius=0.4, dt=1e-5)
        body = body.replace('g = "1"', 'g = "1/(x1 + x2)"')
        with pytest.raises(ConfigError, match="domain center"):
            parse_config(write_config(tmp_path, body))


class TestBuildFieldSpec:
    def test_zero_drift_detection(self):
        spec = build_field_spec(("0", "0"), "-1")
        assert spec.v_is_zero
        assert spec.g_const == -1.0
        assert not spec.depends_on_u

    def test_nonzero_drift(self):
        spec = build_field_spec(("x2", "-x1"), "0")
        assert not spec.v_is_zero
        v = spec.V(np.array([[0.25, 0.5]]), np.zeros(1))
        assert np.allclose(v, [[0.5, -0.25]])

    def test_u_dependence_flags(self):
        spec = build_field_spec(("0", "0"), "u * u")
        assert spec.g_depends_u and spec.depends_on_u
        assert spec.g_const is None

    def test_invalid_expression(self):
        with pytest.raises(ConfigError, match="equation.G"):
            build_field_spec(("0", "0"), "sin(")
