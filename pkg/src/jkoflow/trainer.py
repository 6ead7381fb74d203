"""Fitting energy models to observed trajectories, and rolling them forward.

Variants:
    star                  potential net + interaction net + diffusion parameter
    star_potential        potential net only
    star_time_potential   potential net with time as an extra input
    star_linear           feature-linear potential + interaction + diffusion
    star_linear_potential feature-linear potential only

Couplings between consecutive snapshots are computed once, before the first
epoch, and reused throughout training; density estimates are fitted per
snapshot only when the diffusion term is active.  Fitting is deterministic:
the same data, config and seed give bit-identical parameters.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ot
from .datagen import _step_rng, implicit_step
from .density import GaussianMixture, fit_gmm
from .features import FeatureMap, build_default
from .linear_solver import LinearEnergyModel, fit_linear
from .measures import EmpiricalSnapshot, PopulationTrajectory
from .nn import AdamState, MlpEnergyModel, adam_step, build_model, loss_and_param_gradient

VARIANTS = (
    "star",
    "star_potential",
    "star_linear",
    "star_linear_potential",
    "star_time_potential",
)
_LINEAR_VARIANTS = ("star_linear", "star_linear_potential")
_INTERNAL_VARIANTS = ("star", "star_linear")


@dataclass
class TrainConfig:
    variant: str = "star_potential"
    epochs: int = 1000
    batch_pairs: int = 250
    learning_rate: float = 1e-3
    gmm_k: int = 10
    ridge_lambda: float = 0.01
    hidden: tuple[int, ...] = (64, 64)
    interaction_subsample: int = 0
    # drop the diffusion term even for variants that normally carry it,
    # e.g. when the data is known to be noiseless
    pin_internal: bool = False
    seed: int = 0
    ot: ot.OtConfig = field(default_factory=ot.OtConfig)
    # linear variants pick their feature maps here; None means the default basis
    potential_features: FeatureMap | None = None
    interaction_features: FeatureMap | None = None

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_pairs < 1:
            raise ValueError("batch_pairs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.gmm_k < 1:
            raise ValueError("gmm_k must be >= 1")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be >= 0")


@dataclass
class FitResult:
    model: MlpEnergyModel | LinearEnergyModel
    loss_history: list[float]
    couple_seconds: float
    train_seconds: float


def _fit_gmms(
    train: PopulationTrajectory, cfg: TrainConfig
) -> list[GaussianMixture | None]:
    """Density estimates for snapshots 1..T (index 0 is never queried)."""
    gmms: list[GaussianMixture | None] = [None]
    for snap in train.snapshots[1:]:
        k = min(cfg.gmm_k, snap.n_particles)
        gmms.append(fit_gmm(snap.points, snap.weights, k=k, seed=cfg.seed))
    return gmms


def fit(train: PopulationTrajectory, cfg: TrainConfig) -> FitResult:
    """Couple once, then fit the requested variant."""
    if train.n_steps < 1:
        raise ValueError("training needs at least two snapshots")
    t0 = time.perf_counter()
    couplings = ot.couple_trajectory(train, cfg.ot)
    couple_seconds = time.perf_counter() - t0

    t1 = time.perf_counter()
    internal = cfg.variant in _INTERNAL_VARIANTS and not cfg.pin_internal
    gmms = _fit_gmms(train, cfg) if internal else None

    if cfg.variant in _LINEAR_VARIANTS:
        potential_map = cfg.potential_features or build_default(train.dim)
        interaction_map = None
        if cfg.variant == "star_linear":
            interaction_map = cfg.interaction_features or build_default(train.dim)
        template = LinearEnergyModel(
            potential_map=potential_map,
            interaction_map=interaction_map,
            use_internal=internal,
            ridge_lambda=cfg.ridge_lambda,
        )
        model, loss = fit_linear(template, train, couplings, gmms)
        history = [loss]
    else:
        model, history = _fit_mlp(train, couplings, gmms, cfg, internal)
    train_seconds = time.perf_counter() - t1
    return FitResult(model, history, couple_seconds, train_seconds)


def _fit_mlp(
    train: PopulationTrajectory,
    couplings,
    gmms,
    cfg: TrainConfig,
    internal: bool,
) -> tuple[MlpEnergyModel, list[float]]:
    model = build_model(
        dim=train.dim,
        seed=cfg.seed,
        with_interaction=cfg.variant == "star",
        with_internal=internal,
        time_conditioned=cfg.variant == "star_time_potential",
        hidden=cfg.hidden,
    )
    params = model.parameters()
    state = AdamState.for_params(params, lr=cfg.learning_rate)

    starts, ends, masses, steps = [], [], [], []
    for t, coupling in enumerate(couplings):
        starts.append(train.snapshots[t].points[coupling.source_indices])
        ends.append(train.snapshots[t + 1].points[coupling.target_indices])
        masses.append(coupling.masses)
        steps.append(np.full(coupling.masses.shape[0], t, dtype=np.int64))
    x_start = np.concatenate(starts)
    x_end = np.concatenate(ends)
    mass = np.concatenate(masses)
    step_of_pair = np.concatenate(steps)
    n_pairs = mass.shape[0]
    horizon = train.n_steps

    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    subsample_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))
    history = []
    for epoch in range(cfg.epochs):
        perm = shuffle_rng.permutation(n_pairs)
        epoch_loss = 0.0
        for batch_index, lo in enumerate(range(0, n_pairs, cfg.batch_pairs)):
            idx = perm[lo : lo + cfg.batch_pairs]
            batch_steps = step_of_pair[idx]
            batch_loss = 0.0
            batch_grads = None
            # a batch may mix timesteps; the residual context (next snapshot,
            # its density, the time input) is resolved per group
            for t in np.unique(batch_steps):
                sel = idx[batch_steps == t]
                snap_next = train.snapshots[t + 1]
                loss, grads = loss_and_param_gradient(
                    model,
                    x_start[sel],
                    x_end[sel],
                    mass[sel],
                    train.tau,
                    snapshot_next=(snap_next.points, snap_next.weights)
                    if model.interaction_net is not None
                    else None,
                    gmm_next=gmms[t + 1] if gmms is not None else None,
                    time_input=(t + 1) / horizon if model.time_conditioned else None,
                    interaction_subsample=cfg.interaction_subsample,
                    subsample_rng=subsample_rng,
                )
                batch_loss += loss
                if batch_grads is None:
                    batch_grads = grads
                else:
                    batch_grads = [a + b for a, b in zip(batch_grads, grads)]
            if not np.isfinite(batch_loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}"
                )
            adam_step(state, params, batch_grads)
            epoch_loss += batch_loss
        history.append(epoch_loss)
    return model, history


# ---------------------------------------------------------------------------
# prediction and evaluation


def predict_explicit(
    model,
    initial: EmpiricalSnapshot,
    steps: int,
    tau: float,
    beta_noise: bool = False,
    seed: int = 0,
    time_offset: int | None = None,
    time_scale: int | None = None,
) -> PopulationTrajectory:
    """Forward rollout with the learned energies.

    Each step subtracts tau times the learned drift evaluated at the current
    cloud (the interaction term averages over the predicted population
    itself).  Diffusion noise is off by default: predictions are deterministic
    unless ``beta_noise`` is set, in which case counter-based noise scaled by
    the learned beta is added.  Time-conditioned models read the potential at
    the step's own time, ``(time_offset + k) / time_scale``.
    """
    offset = initial.time_index if time_offset is None else time_offset
    points = initial.points.copy()
    frames = [points]
    for k in range(steps):
        time_value = None
        if getattr(model, "time_conditioned", False):
            if time_scale is None:
                raise ValueError("time-conditioned model needs time_scale")
            time_value = (offset + k) / time_scale
        drift = model.grad_potential(points, time_value=time_value)
        drift = drift + model.grad_interaction_mean(points, points, initial.weights)
        new = points - tau * drift
        beta = max(float(model.beta), 0.0)
        if beta_noise and beta > 0:
            noise = _step_rng(seed, offset + k).standard_normal(points.shape)
            new = new + np.sqrt(2.0 * tau * beta) * noise
        if not np.isfinite(new).all():
            raise RuntimeError(f"non-finite state at rollout step {k + 1}")
        points = new
        frames.append(points)
    snaps = [EmpiricalSnapshot(f, initial.weights, k) for k, f in enumerate(frames)]
    return PopulationTrajectory(snaps, tau)


def predict_implicit(
    model,
    initial: EmpiricalSnapshot,
    steps: int,
    tau: float,
    time_offset: int | None = None,
    time_scale: int | None = None,
) -> PopulationTrajectory:
    """Rollout where each step solves the learned balance condition
    x' = x - tau * grad_V(x', t').  Potential-only models."""
    if (
        getattr(model, "interaction_net", None) is not None
        or getattr(model, "interaction_map", None) is not None
    ):
        raise ValueError("implicit prediction supports potential-only models")
    offset = initial.time_index if time_offset is None else time_offset
    time_conditioned = getattr(model, "time_conditioned", False)
    if time_conditioned and time_scale is None:
        raise ValueError("time-conditioned model needs time_scale")

    def grad_fn(x: np.ndarray, t: float | None) -> np.ndarray:
        return model.grad_potential(x, time_value=t)

    points = initial.points.copy()
    frames = [points]
    for k in range(steps):
        t_next = (offset + k + 1) / time_scale if time_conditioned else None
        points = implicit_step(points, grad_fn, tau, t_next)
        frames.append(points)
    snaps = [EmpiricalSnapshot(f, initial.weights, k) for k, f in enumerate(frames)]
    return PopulationTrajectory(snaps, tau)


def evaluate(
    model,
    test: PopulationTrajectory,
    scheme: str = "explicit",
    beta_noise: bool = False,
    seed: int = 0,
) -> dict:
    """One-step-ahead transport error on held-out data.

    For every observed transition t -> t+1 the model predicts one step from
    the observed snapshot at t, and the earth-mover distance to the observed
    snapshot at t+1 is recorded.  Returns per-step distances plus their mean
    and population standard deviation.
    """
    if scheme not in ("explicit", "implicit"):
        raise ValueError(f"scheme must be 'explicit' or 'implicit', got {scheme!r}")
    per_step = []
    for t in range(test.n_steps):
        snap = test.snapshots[t]
        if scheme == "explicit":
            rollout = predict_explicit(
                model, snap, 1, test.tau,
                beta_noise=beta_noise, seed=seed,
                time_offset=t, time_scale=test.n_steps,
            )
        else:
            rollout = predict_implicit(
                model, snap, 1, test.tau, time_offset=t, time_scale=test.n_steps
            )
        per_step.append(ot.emd(rollout.snapshots[1], test.snapshots[t + 1]))
    arr = np.asarray(per_step)
    return {
        "scheme": scheme,
        "per_step_emd": per_step,
        "mean_emd": float(arr.mean()),
        "std_emd": float(arr.std()),
    }


# ---------------------------------------------------------------------------
# model checkpoints


def save_model(model, path: Path | str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2)
        fh.write("\n")


def load_model(path: Path | str):
    with open(path) as fh:
        data = json.load(fh)
    kind = data.get("kind")
    if kind == "mlp":
        return MlpEnergyModel.from_json(data)
    if kind == "linear":
        return LinearEnergyModel.from_json(data)
    raise ValueError(f"{path}: unknown model kind {kind!r}")
