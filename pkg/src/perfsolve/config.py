"""Experiment configuration: TOML parsing and full validation.

A config file describes the domain (rectangle, explicit perforations and/or a
regular lattice of equal disks), the equation fields as expressions over
x1/x2/u, the network architecture, and the training/oracle settings.  All
problems are validated eagerly; every error is collected and reported at once.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import expressions as ex
from .geometry import (
    PerforatedDomain,
    Perforation,
    Rect,
    lattice_perforations,
    validate_configuration,
)
from .network import NetworkConfig
from .stochastic import FieldSpec, StepConfig, check_timestep


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n  " + "\n  ".join(errors))


@dataclass
class ExperimentConfig:
    domain: PerforatedDomain
    fields: FieldSpec
    g: Callable
    net: NetworkConfig
    step: StepConfig
    n_collocation: int
    n_walkers: int
    iterations: int
    alpha0: float
    gamma: float
    beta1: float
    beta2: float
    inner_steps: int
    seed: int
    checkpoint_every: int
    probe_every: int
    oracle_n_probes: int
    oracle_n_walkers: int
    oracle_dt: Optional[float]
    expressions: dict = field(default_factory=dict)  # source strings, for reports
    lattice: Optional[tuple[int, int, float]] = None  # (nx, ny, radius)


def _compile_scalar(tree: ex.Node) -> Callable:
    def f(x, u=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        env = {"x1": x[:, 0], "x2": x[:, 1]}
        if u is not None:
            env["u"] = np.asarray(u)
        out = ex.evaluate(tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), (x.shape[0],)).copy()
    return f


def _compile_vector(tx: ex.Node, ty: ex.Node) -> Callable:
    fx, fy = _compile_scalar(tx), _compile_scalar(ty)

    def f(x, u=None):
        return np.column_stack([fx(x, u), fy(x, u)])
    return f


def build_field_spec(v_src: tuple[str, str], g_src: str,
                     errors: Optional[list] = None) -> Optional[FieldSpec]:
    """FieldSpec from expression sources for V = (V1, V2) and G."""
    own_errors = errors if errors is not None else []
    trees = {}
    for name, src in (("V1", v_src[0]), ("V2", v_src[1]), ("G", g_src)):
        try:
            trees[name] = ex.parse_expression(src, variables=("x1", "x2", "u"))
        except ex.ExpressionError as e:
            own_errors.append(f"equation.{name}: {e}")
    if errors is None and own_errors:
        raise ConfigError(own_errors)
    if len(trees) < 3:
        return None
    v1c = ex.constant_value(trees["V1"])
    v2c = ex.constant_value(trees["V2"])
    v_zero = v1c == 0.0 and v2c == 0.0
    g_const = ex.constant_value(trees["G"])
    g_fun = _compile_scalar(trees["G"])
    return FieldSpec(
        V=None if v_zero else _compile_vector(trees["V1"], trees["V2"]),
        G=g_fun,
        v_depends_u="u" in (ex.variables_used(trees["V1"]) | ex.variables_used(trees["V2"])),
        g_depends_u="u" in ex.variables_used(trees["G"]),
        g_const=g_const,
    )


def parse_config(path) -> ExperimentConfig:
    """Load, validate and compile a config file; aggregates all errors."""
    errors: list[str] = []
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError([f"TOML syntax: {e}"]) from e

    def section(name) -> dict:
        s = raw.get(name)
        if not isinstance(s, dict):
            errors.append(f"missing [{name}] section")
            return {}
        return s

    dom_s = section("domain")
    eq_s = section("equation")
    net_s = section("network")
    tr_s = section("training")
    or_s = raw.get("oracle", {})

    # --- domain ---
    domain = None
    lattice = None
    try:
        rect = Rect(tuple(dom_s.get("lo", (-0.5, -0.5))),
                    tuple(dom_s.get("hi", (0.5, 0.5))))
        perfs = [Perforation(tuple(p["center"]), float(p["radius"]))
                 for p in dom_s.get("perforations", [])]
        if "lattice" in dom_s:
            lat = dom_s["lattice"]
            lattice = (int(lat["nx"]), int(lat["ny"]), float(lat["radius"]))
            perfs += lattice_perforations(rect, *lattice)
        domain = PerforatedDomain(rect, perfs)
        for v in validate_configuration(domain):
            errors.append(f"domain: {v}")
    except (KeyError, TypeError, ValueError) as e:
        errors.append(f"domain: {e}")

    # --- equation ---
    v_src = tuple(eq_s.get("V", ("0", "0")))
    g_rhs_src = str(eq_s.get("G", "0"))
    g_bdy_src = str(eq_s.get("g", "0"))
    fields = build_field_spec(v_src, g_rhs_src, errors)
    g_fun = None
    try:
        g_tree = ex.parse_expression(g_bdy_src, variables=("x1", "x2"))
        g_fun = _compile_scalar(g_tree)
    except ex.ExpressionError as e:
        errors.append(f"equation.g: {e}")
    mode = eq_s.get("mode", "drifted")
    if mode not in ("drifted", "brownian_weighted"):
        errors.append(f"equation.mode: unknown mode {mode!r}")

    if domain is not None and fields is not None and g_fun is not None:
        center = np.array([[0.5 * (domain.rect.lo[0] + domain.rect.hi[0]),
                            0.5 * (domain.rect.lo[1] + domain.rect.hi[1])]])
        try:
            vals = [g_fun(center)]
            vals.append(fields.G(center, np.zeros(1)))
            if fields.V is not None:
                vals.append(fields.V(center, np.zeros(1)))
            if not all(np.all(np.isfinite(v)) for v in vals):
                errors.append("equation: expression not finite at the domain center")
        except (ex.EvaluationError, ArithmeticError) as e:
            errors.append(f"equation: evaluation failed at the domain center: {e}")

    # --- network ---
    net = None
    try:
        net = NetworkConfig(
            fourier_pairs=int(net_s.get("fourier_pairs", 100)),
            sigma2=float(net_s.get("sigma2", 9.0)),
            hidden_dims=tuple(net_s.get("hidden", (200, 200, 200))),
            activation=net_s.get("activation", "tanh"),
        )
    except (TypeError, ValueError) as e:
        errors.append(f"network: {e}")

    # --- training ---
    step = None
    try:
        step = StepConfig(dt_micro=float(tr_s.get("dt_micro", 1e-5)),
                          steps_per_macro=int(tr_s.get("steps_per_macro", 64)),
                          mode=mode if mode in ("drifted", "brownian_weighted") else "drifted")
    except (TypeError, ValueError) as e:
        errors.append(f"training.step: {e}")

    if domain is not None and step is not None and len(domain.perforations) > 0:
        mean_step, ok = check_timestep(step.dt_micro, domain.min_radius)
        if not ok:
            errors.append(
                f"timestep check failed: mean step {mean_step:.3g} vs "
                f"min radius {domain.min_radius:.3g}")

    def pos_int(name, default):
        v = tr_s.get(name, default)
        if not isinstance(v, int) or v < 1:
            errors.append(f"training.{name}: must be a positive integer, got {v!r}")
            return default
        return v

    n_collocation = pos_int("n_collocation", 1000)
    n_walkers = pos_int("n_walkers", 100)
    iterations = pos_int("iterations", 1000)
    inner_steps = pos_int("inner_steps", 3)

    if errors:
        raise ConfigError(errors)

    return ExperimentConfig(
        domain=domain, fields=fields, g=g_fun, net=net, step=step,
        n_collocation=n_collocation, n_walkers=n_walkers, iterations=iterations,
        alpha0=float(tr_s.get("alpha0", 1e-3)), gamma=float(tr_s.get("gamma", 0.9)),
        beta1=float(tr_s.get("beta1", 0.99)), beta2=float(tr_s.get("beta2", 0.99)),
        inner_steps=inner_steps, seed=int(tr_s.get("seed", 0)),
        checkpoint_every=int(tr_s.get("checkpoint_every", 0)),
        probe_every=int(tr_s.get("probe_every", 0)),
        oracle_n_probes=int(or_s.get("n_probes", 16)),
        oracle_n_walkers=int(or_s.get("n_walkers", 100_000)),
        oracle_dt=float(or_s["dt_micro"]) if "dt_micro" in or_s else None,
        expressions={"V": list(v_src), "G": g_rhs_src, "g": g_bdy_src, "mode": mode},
        lattice=lattice,
    )
