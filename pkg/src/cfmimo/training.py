"""Probabilistic training of the association policy and policy evaluation.

Per mini-batch realization the network's connection probabilities are sampled
through independent Bernoulli draws (master link forced on), the chosen
objective's analytic gradient w.r.t. the sampled activation matrix is
evaluated at that binary point, and the realization loss couples outputs with
that gradient:

    C_r = sum_kl  l_kl * g_kl,        g = grad of objective at sampled A_r.

The gradient matrix is a constant w.r.t. the network parameters, so
dC_r/dl = g feeds straight into backpropagation through time. Batch losses
add up and one Adam ascent step is applied per batch. All randomness is
drawn from streams keyed by (seed, purpose, epoch, drop, realization) so any
execution order reproduces identical results.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .association import apply_threshold, assign_pilots, select_masters
from .channel import Placement, sample_gains
from .config import ExperimentConfig
from .errors import TrainingDiverged
from .metrics import (
    ObjectiveSpec,
    allocate_power,
    gamma_matrix,
    grad_activations,
    objective_eval,
    sinr_se,
)
from .streams import TAG_CHANNEL, TAG_SAMPLE, TAG_SHUFFLE, TAG_TEST, stream
from .model import (
    AdamState,
    ModelParams,
    adam_step,
    build_inputs,
    model_backward,
    model_forward,
    order_chain,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "sample_activations",
    "training_loss",
    "centralized_step",
    "train",
    "make_model_policy",
    "evaluate_policy",
]

THRESHOLD = 0.5


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    objective: ObjectiveSpec
    lr: float = 1e-5
    master_forcing: bool = True
    eval_every: int = 0          # checkpoint cadence in epochs; 0 = only at end
    seed: int = 0
    pilot_inputs: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def sample_activations(
    probs: np.ndarray, masters: np.ndarray, rng: np.random.Generator, force_master=True
) -> np.ndarray:
    """Bernoulli activation draw: on iff uniform < probability."""
    active = (rng.random(probs.shape) < probs).astype(np.int8)
    if force_master:
        active[np.arange(len(masters)), masters] = 1
    return active


def training_loss(probs: np.ndarray, grad: np.ndarray):
    """Realization loss and its output gradient: C_r and dC_r/dl = grad."""
    return float((probs * grad).sum()), grad


@dataclass
class _DropContext:
    gains: np.ndarray
    masters: np.ndarray
    pilots: object
    gamma: np.ndarray
    inputs: np.ndarray
    chain: object


def _realize(cfg: ExperimentConfig, ap_xy, ue_xy, rng, pilot_inputs: bool) -> _DropContext:
    gains = sample_gains(cfg, Placement(ap_xy, ue_xy), rng)
    masters = select_masters(gains)
    pilots = assign_pilots(gains, masters, cfg.pilot_symbols)
    gamma = gamma_matrix(gains, pilots, cfg)
    inputs = build_inputs(
        gains, ue_xy, cfg,
        pilot_of=pilots.pilot_of if pilot_inputs else None,
        num_pilots=cfg.pilot_symbols if pilot_inputs else None,
    )
    return _DropContext(gains, masters, pilots, gamma, inputs, order_chain(gains, masters))


def _cluster_objective(ctx: _DropContext, clusters, spec, cfg) -> float:
    power = allocate_power(ctx.gains, clusters, cfg.max_ap_power_w)
    _, se = sinr_se(ctx.gains, ctx.gamma, power, clusters, ctx.pilots, cfg)
    return objective_eval(se, clusters, spec)


def centralized_step(
    params: ModelParams,
    opt: AdamState,
    cfg: ExperimentConfig,
    tcfg: TrainConfig,
    ap_xy: np.ndarray,
    ue_xy: np.ndarray,
    rng_pairs,
):
    """One batch update on a single UE drop.

    ``rng_pairs`` yields one (channel_rng, sampling_rng) pair per
    realization; exposing the streams keeps the update bit-reproducible under
    any scheduling and lets the distributed path be checked against this one.
    Returns per-batch statistics.
    """
    grad_sum = None
    loss_sum = 0.0
    sampled_vals, thresh_vals, conns = [], [], []
    for rng_ch, rng_bern in rng_pairs:
        ctx = _realize(cfg, ap_xy, ue_xy, rng_ch, tcfg.pilot_inputs)
        trace = model_forward(params, ctx.inputs, ctx.chain)
        active = sample_activations(
            trace.probs, ctx.masters, rng_bern, force_master=tcfg.master_forcing
        )
        g = grad_activations(
            ctx.gains, ctx.gamma, active.astype(float), ctx.pilots, tcfg.objective, cfg
        )
        loss, dprobs = training_loss(trace.probs, g)
        grads = model_backward(params, trace, dprobs)
        grad_sum = grads if grad_sum is None else [a + b for a, b in zip(grad_sum, grads)]
        loss_sum += loss
        sampled_vals.append(_cluster_objective(ctx, active, tcfg.objective, cfg))
        decided = apply_threshold(trace.probs, THRESHOLD, ctx.masters)
        thresh_vals.append(_cluster_objective(ctx, decided, tcfg.objective, cfg))
        conns.append(int(decided.sum()))
    if not np.isfinite(loss_sum) or not all(np.all(np.isfinite(g)) for g in grad_sum):
        raise TrainingDiverged("non-finite batch loss or gradient")
    adam_step(params, grad_sum, opt, tcfg.lr)
    return {
        "loss": loss_sum,
        "mean_sampled": float(np.mean(sampled_vals)),
        "mean_thresholded": float(np.mean(thresh_vals)),
        "mean_connections": float(np.mean(conns)),
    }


def train(
    tcfg: TrainConfig,
    cfg: ExperimentConfig,
    ap_xy: np.ndarray,
    train_ue_xy: np.ndarray,
    params: ModelParams,
    checkpoint_path=None,
):
    """Run the full training schedule over all training drops.

    Drops are shuffled once per epoch with an epoch-derived stream. Returns
    (params, log_rows); log rows are (epoch, drop, mean sampled objective,
    mean thresholded objective, mean thresholded connections, wall seconds).
    On divergence the last completed epoch's checkpoint (if a path is given)
    survives and TrainingDiverged is raised.
    """
    n_drops = train_ue_xy.shape[0]
    opt = AdamState.zeros_like(params)
    log_rows = []
    t0 = time.perf_counter()
    for epoch in range(tcfg.epochs):
        order = stream(tcfg.seed, TAG_SHUFFLE, epoch).permutation(n_drops)
        for drop_idx in order:
            pairs = [
                (
                    stream(tcfg.seed, TAG_CHANNEL, epoch, drop_idx, r),
                    stream(tcfg.seed, TAG_SAMPLE, epoch, drop_idx, r),
                )
                for r in range(tcfg.batch_size)
            ]
            try:
                stats = centralized_step(
                    params, opt, cfg, tcfg, ap_xy, train_ue_xy[drop_idx], pairs
                )
            except TrainingDiverged as exc:
                raise TrainingDiverged(
                    f"diverged at epoch {epoch} drop {drop_idx}: {exc}",
                    checkpoint_path=checkpoint_path,
                ) from exc
            log_rows.append(
                (
                    epoch,
                    int(drop_idx),
                    stats["mean_sampled"],
                    stats["mean_thresholded"],
                    stats["mean_connections"],
                    time.perf_counter() - t0,
                )
            )
        if checkpoint_path and tcfg.eval_every and (epoch + 1) % tcfg.eval_every == 0:
            save_checkpoint(params, checkpoint_path, pilot_inputs=tcfg.pilot_inputs)
    if checkpoint_path:
        save_checkpoint(params, checkpoint_path, pilot_inputs=tcfg.pilot_inputs)
    return params, log_rows


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def make_model_policy(params: ModelParams, pilot_inputs: bool = False):
    """Wrap trained parameters as a cluster-producing policy."""

    def policy(gains, ue_xy, masters, pilots, cfg):
        inputs = build_inputs(
            gains, ue_xy, cfg,
            pilot_of=pilots.pilot_of if pilot_inputs else None,
            num_pilots=cfg.pilot_symbols if pilot_inputs else None,
        )
        trace = model_forward(params, inputs, order_chain(gains, masters))
        return apply_threshold(trace.probs, THRESHOLD, masters)

    return policy


@dataclass
class DropResult:
    drop: int
    se_sum: float
    se_min: float
    connections: int
    per_ue_se: np.ndarray


@dataclass
class EvalSummary:
    mean_se_sum: float
    mean_se_min: float
    mean_connections: float
    records: list = field(repr=False)


def evaluate_policy(
    policy,
    cfg: ExperimentConfig,
    ap_xy: np.ndarray,
    test_ue_xy: np.ndarray,
    seed: int,
) -> EvalSummary:
    """Evaluate any cluster policy over held-out drops.

    The gain realization per drop depends only on (seed, drop), so competing
    strategies face identical channels.
    """
    records = []
    for i in range(test_ue_xy.shape[0]):
        rng = stream(seed, TAG_TEST, i)
        gains = sample_gains(cfg, Placement(ap_xy, test_ue_xy[i]), rng)
        masters = select_masters(gains)
        pilots = assign_pilots(gains, masters, cfg.pilot_symbols)
        clusters = policy(gains, test_ue_xy[i], masters, pilots, cfg)
        power = allocate_power(gains, clusters, cfg.max_ap_power_w)
        gamma = gamma_matrix(gains, pilots, cfg)
        _, se = sinr_se(gains, gamma, power, clusters, pilots, cfg)
        records.append(
            DropResult(i, float(se.sum()), float(se.min()), int(clusters.sum()), se)
        )
    return EvalSummary(
        mean_se_sum=float(np.mean([r.se_sum for r in records])),
        mean_se_min=float(np.mean([r.se_min for r in records])),
        mean_connections=float(np.mean([r.connections for r in records])),
        records=records,
    )
