"""Bootstrapped martingale training loop.

Each outer iteration: sample fresh collocation points, simulate one macro step
of walkers per point with the frozen network, average the martingale targets,
then run a few Adam steps on the squared deviation of the current network from
those (constant) targets.  The frozen copy is refreshed once per outer
iteration.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import network as nets
from .geometry import PerforatedDomain, sample_collocation
from .network import AdamState, FourierNetwork, adam_step, backward, forward, learning_rate
from .rng import substream_seed
from .stochastic import FieldSpec, PathBatch, StepConfig, check_timestep, simulate_paths

# tags separating the per-iteration substreams
_TAG_WALKERS = 0x57414C4B   # walker increments
_TAG_COLLOC = 0x434F4C4C    # collocation sampling


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration}: loss={loss}")
        self.iteration = iteration
        self.loss = loss


@dataclass
class TrainConfig:
    domain: PerforatedDomain
    fields: FieldSpec
    g: Callable                      # Dirichlet data, (n, 2) -> (n,)
    net: nets.NetworkConfig
    n_collocation: int
    n_walkers: int
    step: StepConfig
    iterations: int
    alpha0: float = 1e-3
    gamma: float = 0.9
    beta1: float = 0.99
    beta2: float = 0.99
    inner_steps: int = 3
    seed: int = 0
    probe_every: int = 0             # 0 disables probe validation
    probe_points: Optional[np.ndarray] = None
    probe_values: Optional[np.ndarray] = None
    checkpoint_every: int = 0
    loss_cap: float = 1e6

    def __post_init__(self):
        if self.n_collocation < 1 or self.n_walkers < 1 or self.inner_steps < 1:
            raise ValueError("n_collocation, n_walkers, inner_steps must be >= 1")


@dataclass
class TrainState:
    current: FourierNetwork
    frozen: FourierNetwork
    adam: AdamState
    iteration: int = 0
    history: list = field(default_factory=list)


def init_state(cfg: TrainConfig, net: Optional[FourierNetwork] = None) -> TrainState:
    current = net if net is not None else nets.init_network(cfg.net, cfg.seed)
    return TrainState(current=current, frozen=current.copy(),
                      adam=AdamState.for_network(current, cfg.beta1, cfg.beta2))


def compute_targets(state: TrainState, points: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Martingale targets from the frozen network; constants w.r.t. theta.

    Per point: mean over walkers of (terminal - integral_G) * weight, with
    terminal = u_frozen at the macro-step position for surviving walkers and
    the Dirichlet value at the exit point for killed ones.
    """
    frozen = state.frozen

    def u_eval(x):
        return forward(frozen, x)

    seed = substream_seed(cfg.seed, _TAG_WALKERS + state.iteration)
    batch = simulate_paths(cfg.domain, cfg.fields,
                           u_eval if cfg.fields.depends_on_u else None,
                           points, cfg.n_walkers, cfg.step, seed)
    return _targets_from_batch(frozen, cfg.g, batch, points.shape[0],
                               cfg.n_walkers, cfg.step.mode)


def _targets_from_batch(frozen: FourierNetwork, g: Callable, batch: PathBatch,
                        n_points: int, n_walkers: int, mode: str) -> np.ndarray:
    terminal = np.empty(len(batch))
    active = ~batch.killed
    if active.any():
        terminal[active] = forward(frozen, batch.position[active])
    if batch.killed.any():
        terminal[batch.killed] = np.asarray(g(batch.exit_point[batch.killed]))
    payoff = terminal - batch.integral_G
    if mode == "brownian_weighted":
        payoff = payoff * np.exp(batch.log_weight)
    return payoff.reshape(n_points, n_walkers).mean(axis=1)


def loss_and_grad(current: FourierNetwork, points: np.ndarray,
                  targets: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean squared deviation from the targets and its parameter gradient."""
    u = forward(current, points)
    resid = u - targets
    n = points.shape[0]
    loss = float(np.mean(resid**2))
    grads = backward(current, points, 2.0 * resid / n)
    return loss, grads


def train_iteration(state: TrainState, cfg: TrainConfig) -> tuple[float, float]:
    """One outer iteration; returns (loss at frozen params, learning rate)."""
    rng = np.random.default_rng([cfg.seed, state.iteration, _TAG_COLLOC])
    points = sample_collocation(cfg.domain, cfg.n_collocation, rng)
    targets = compute_targets(state, points, cfg)
    lr = learning_rate(cfg.alpha0, cfg.gamma, state.iteration)
    loss0 = None
    for _ in range(cfg.inner_steps):
        loss, grads = loss_and_grad(state.current, points, targets)
        if loss0 is None:
            loss0 = loss
        if not np.isfinite(loss) or loss > cfg.loss_cap:
            raise TrainingDiverged(state.iteration, loss)
        state.current.set_params(adam_step(state.current.params(), grads,
                                           state.adam, lr))
    state.frozen = state.current.copy()
    state.iteration += 1
    state.history.append((state.iteration, loss0))
    return loss0, lr


def train(cfg: TrainConfig, metrics_path=None, checkpoint_dir=None,
          log_timing: bool = False,
          progress: Optional[Callable] = None) -> tuple[FourierNetwork, list]:
    """Run the configured number of outer iterations.

    Emits one JSON record per iteration to metrics_path (newline-delimited);
    wall-clock timing is included only when log_timing is set so that metrics
    logs are byte-reproducible for a fixed seed.
    """
    if len(cfg.domain.perforations) > 0:
        _, ok = check_timestep(cfg.step.dt_micro, cfg.domain.min_radius)
        if not ok:
            raise ValueError("timestep check failed for the smallest perforation")
    state = init_state(cfg)
    sink = open(metrics_path, "w") if metrics_path else None
    try:
        for _ in range(cfg.iterations):
            it = state.iteration
            t0 = time.perf_counter()
            loss, lr = train_iteration(state, cfg)
            record = {"iteration": it, "loss": loss, "lr": lr}
            if log_timing:
                record["wall_ms"] = (time.perf_counter() - t0) * 1e3
            if cfg.probe_every and cfg.probe_points is not None \
                    and (it + 1) % cfg.probe_every == 0:
                u = forward(state.current, cfg.probe_points)
                ref = cfg.probe_values
                record["probe_rmse"] = float(np.sqrt(np.mean((u - ref) ** 2)))
            if sink is not None:
                sink.write(json.dumps(record, sort_keys=True) + "\n")
                sink.flush()
            if checkpoint_dir is not None and cfg.checkpoint_every \
                    and (it + 1) % cfg.checkpoint_every == 0:
                nets.save_checkpoint(state.current,
                                     f"{checkpoint_dir}/ckpt_{it + 1:07d}.bin",
                                     cfg.seed, it + 1)
            if progress is not None:
                progress(state, record)
    finally:
        if sink is not None:
            sink.close()
    return state.current, state.history
