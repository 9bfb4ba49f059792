"""Fully scalable variant: per-master local policies over AP neighborhoods.

Every AP owns a small policy whose inputs and outputs cover only a fixed
geometric template of neighboring APs (a w-by-w square around its grid node,
or the whole network for the "full" template used in equivalence checks).
Template slots falling outside the grid are masked: their gain features are
zero and their output neurons can never activate.

Inference is fully parallel and message-free: each master simulates the
chain of every UE managed inside its neighborhood but keeps only the rows of
its own UEs. Training adds exactly one synchronization round per batch
realization: each master samples activation rows for its own UEs and shares
them with every AP whose neighborhood contains that master, after which all
masters evaluate their local objective on a consistent activation set and
update their own weights independently. The simulator counts rounds and
messages and can inject delivery faults for protocol tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .association import PilotAssignment, assign_pilots, select_masters
from .channel import Placement, sample_gains
from .config import ExperimentConfig
from .errors import ConfigError, ProtocolError, TrainingDiverged
from .metrics import gamma_matrix, grad_activations
from .model import (
    GAIN_DB_SCALE,
    GAIN_DB_SHIFT,
    AdamState,
    ModelParams,
    adam_step,
    init_params,
    model_backward,
    model_forward,
    order_chain,
)
from .streams import TAG_CHANNEL, TAG_INIT, TAG_MASTER, TAG_SAMPLE, TAG_SHUFFLE, stream
from .training import THRESHOLD, TrainConfig, sample_activations, training_loss

__all__ = [
    "NeighborhoodMap",
    "LocalView",
    "build_neighborhoods",
    "build_local_view",
    "local_view_inputs",
    "local_infer",
    "distributed_infer",
    "exchange_activations",
    "distributed_train_step",
    "distributed_train",
    "init_local_models",
    "make_distributed_policy",
]

TEMPLATES = ("3x3", "5x5", "full")


@dataclass(frozen=True)
class NeighborhoodMap:
    """Per-AP decision template.

    ``slots[l, s]`` is the global AP id occupying slot s of AP l's template,
    -1 where the slot falls outside the deployment. Grid templates order
    slots row-major over the (dy, dx) offsets, which coincides with global
    AP-id order restricted to the template; the AP itself sits in the center
    slot. The "full" template lists every AP in id order for every AP.
    """

    template: str
    slots: np.ndarray

    @property
    def width(self) -> int:
        return self.slots.shape[1]

    def group(self, master: int) -> np.ndarray:
        """APs whose neighborhood contains ``master`` (receivers of its rows)."""
        return np.nonzero((self.slots == master).any(axis=1))[0]


def build_neighborhoods(cfg: ExperimentConfig, template: str) -> NeighborhoodMap:
    if template not in TEMPLATES:
        raise ConfigError(f"template must be one of {TEMPLATES}")
    n_aps = cfg.num_aps
    if template == "full":
        return NeighborhoodMap("full", np.tile(np.arange(n_aps), (n_aps, 1)))
    w = int(template[0])
    side = cfg.grid_side
    if w > side:
        raise ConfigError(f"{template} template does not fit a {side}x{side} grid")
    half = w // 2
    slots = np.full((n_aps, w * w), -1, dtype=np.int64)
    for ap in range(n_aps):
        gy, gx = divmod(ap, side)
        for dy in range(-half, half + 1):
            for dx in range(-half, half + 1):
                ny, nx = gy + dy, gx + dx
                if 0 <= ny < side and 0 <= nx < side:
                    slots[ap, (dy + half) * w + (dx + half)] = ny * side + nx
    return NeighborhoodMap(template, slots)


@dataclass(frozen=True)
class LocalView:
    """What one master AP sees: its neighborhood and the UEs managed there."""

    center: int                  # the master AP's global id
    ue_ids: np.ndarray           # global ids of in-view UEs, ascending
    slots: np.ndarray            # (S,) global AP id per slot, -1 masked
    live: np.ndarray             # (S,) slot validity
    gains: np.ndarray            # (V, S); masked columns are zero
    master_slots: np.ndarray     # (V,) template slot of each UE's master
    ue_xy: np.ndarray            # (V, 2)
    pilots: PilotAssignment | None

    @property
    def own_rows(self) -> np.ndarray:
        """Positions (within ue_ids) of the UEs this master decides for."""
        return np.nonzero(self.slots[self.master_slots] == self.center)[0]


def build_local_view(
    nmap: NeighborhoodMap,
    center: int,
    gains: np.ndarray,
    masters: np.ndarray,
    ue_xy: np.ndarray,
    pilots: PilotAssignment | None = None,
) -> LocalView:
    slots = nmap.slots[center]
    live = slots >= 0
    slot_of_ap = np.full(gains.shape[1], -1, dtype=np.int64)
    slot_of_ap[slots[live]] = np.nonzero(live)[0]
    in_view = slot_of_ap[masters] >= 0
    ue_ids = np.nonzero(in_view)[0]
    local_gains = np.zeros((len(ue_ids), len(slots)))
    local_gains[:, live] = gains[np.ix_(ue_ids, slots[live])]
    local_pilots = None
    if pilots is not None:
        id_set = set(ue_ids.tolist())
        local_pilots = PilotAssignment(
            pilot_of=pilots.pilot_of[ue_ids],
            pilot_sets=tuple(
                tuple(int(np.searchsorted(ue_ids, k)) for k in members if k in id_set)
                for members in pilots.pilot_sets
            ),
        )
    return LocalView(
        center=center,
        ue_ids=ue_ids,
        slots=slots,
        live=live,
        gains=local_gains,
        master_slots=slot_of_ap[masters[ue_ids]],
        ue_xy=ue_xy[ue_ids],
        pilots=local_pilots,
    )


def local_view_inputs(view: LocalView, cfg: ExperimentConfig, pilot_inputs: bool) -> np.ndarray:
    """Cell inputs over template slots; masked slots contribute zero features."""
    gain_feat = np.zeros_like(view.gains)
    gain_feat[:, view.live] = (
        10.0 * np.log10(view.gains[:, view.live]) + GAIN_DB_SHIFT
    ) * GAIN_DB_SCALE
    feats = [gain_feat, view.ue_xy / cfg.area_side_m]
    if pilot_inputs:
        onehot = np.zeros((len(view.ue_ids), cfg.pilot_symbols))
        onehot[np.arange(len(view.ue_ids)), view.pilots.pilot_of] = 1.0
        feats.append(onehot)
    return np.concatenate(feats, axis=1)


def _local_forward(view, params, cfg, pilot_inputs):
    inputs = local_view_inputs(view, cfg, pilot_inputs)
    chain = order_chain(view.gains, view.master_slots)
    trace = model_forward(params, inputs, chain)
    trace.probs[:, ~view.live] = 0.0   # masked output neurons are inactive
    return trace


def local_infer(
    view: LocalView, params: ModelParams, cfg: ExperimentConfig, pilot_inputs=False
) -> np.ndarray:
    """Thresholded decisions for the master's own UEs, in global AP columns."""
    trace = _local_forward(view, params, cfg, pilot_inputs)
    own = view.own_rows
    decided = (trace.probs[own] > THRESHOLD).astype(np.int8)
    decided[:, ~view.live] = 0
    decided[np.arange(len(own)), view.master_slots[own]] = 1
    return _scatter_rows(decided, view, cfg.num_aps)


def _scatter_rows(rows_slot: np.ndarray, view: LocalView, n_aps: int) -> np.ndarray:
    """Map slot-space rows to global AP columns."""
    out = np.zeros((rows_slot.shape[0], n_aps), dtype=rows_slot.dtype)
    out[:, view.slots[view.live]] = rows_slot[:, view.live]
    return out


def distributed_infer(
    nmap: NeighborhoodMap,
    models: dict,
    gains: np.ndarray,
    masters: np.ndarray,
    ue_xy: np.ndarray,
    cfg: ExperimentConfig,
    pilots: PilotAssignment | None = None,
    pilot_inputs: bool = False,
) -> np.ndarray:
    """Each master decides for its own UEs; rows are stitched globally."""
    clusters = np.zeros(gains.shape, dtype=np.int8)
    for master in np.unique(masters):
        view = build_local_view(nmap, int(master), gains, masters, ue_xy, pilots)
        own_ids = view.ue_ids[view.own_rows]
        trace = _local_forward(view, models[int(master)], cfg, pilot_inputs)
        own = view.own_rows
        decided = (trace.probs[own] > THRESHOLD).astype(np.int8)
        decided[:, ~view.live] = 0
        decided[np.arange(len(own)), view.master_slots[own]] = 1
        clusters[own_ids] = _scatter_rows(decided, view, gains.shape[1])
    return clusters


# ---------------------------------------------------------------------------
# Simulated intra-group exchange
# ---------------------------------------------------------------------------


@dataclass
class ExchangeLog:
    rounds: int = 0
    messages: int = 0
    dropped: list = field(default_factory=list)


def exchange_activations(
    nmap: NeighborhoodMap,
    row_sources: dict,
    rows_global: dict,
    log: ExchangeLog | None = None,
    drop_messages=None,
) -> dict:
    """Deliver each UE's sampled row to every AP observing its master.

    ``row_sources`` maps UE id -> producing master AP; ``rows_global`` maps
    UE id -> global-column activation row. Returns {receiver AP -> {UE id ->
    row}}; the producer keeps its own copy without a message. One round per
    call. ``drop_messages`` is a fault-injection set of (ue, receiver) pairs.
    """
    log = log if log is not None else ExchangeLog()
    delivered: dict = {}
    for ue, master in row_sources.items():
        for receiver in nmap.group(master):
            receiver = int(receiver)
            if receiver != master:
                if drop_messages and (ue, receiver) in drop_messages:
                    log.dropped.append((ue, receiver))
                    continue
                log.messages += 1
            delivered.setdefault(receiver, {})[ue] = rows_global[ue]
    log.rounds += 1
    return delivered


# ---------------------------------------------------------------------------
# Distributed training
# ---------------------------------------------------------------------------


def init_local_models(
    nmap: NeighborhoodMap, cfg: ExperimentConfig, hidden_size, fc_widths, seed,
    pilot_inputs=False,
) -> dict:
    """One independently seeded model per AP; identical architecture."""
    width = nmap.width
    d = width + 2 + (cfg.pilot_symbols if pilot_inputs else 0)
    return {
        ap: init_params(hidden_size, d, (*fc_widths, width), stream(seed, TAG_INIT, TAG_MASTER, ap))
        for ap in range(cfg.num_aps)
    }


def _assemble_local_activity(view: LocalView, own_rows_slot, delivered_rows) -> np.ndarray:
    """Combine own sampled rows with exchanged foreign rows, in slot space."""
    activity = np.zeros(view.gains.shape, dtype=np.int8)
    own = set(view.own_rows.tolist())
    for pos, ue in enumerate(view.ue_ids):
        if pos in own:
            activity[pos] = own_rows_slot[np.nonzero(view.own_rows == pos)[0][0]]
        else:
            if int(ue) not in delivered_rows:
                raise ProtocolError(f"activation row for UE {int(ue)} missing after exchange")
            row_global = delivered_rows[int(ue)]
            activity[pos, view.live] = row_global[view.slots[view.live]]
    return activity


def distributed_train_step(
    nmap: NeighborhoodMap,
    models: dict,
    opts: dict,
    cfg: ExperimentConfig,
    tcfg: TrainConfig,
    ap_xy: np.ndarray,
    ue_xy: np.ndarray,
    rng_pairs,
    log: ExchangeLog | None = None,
):
    """One batch update of every active master's local model.

    ``rng_pairs`` yields (channel_rng, sampling_rng_factory) per realization,
    the factory keyed by master AP id so scheduling cannot change results.
    All masters share the channel realization; each samples only its own
    UEs' rows, exchanges them within its group, evaluates the objective
    restricted to its view, and accumulates its own BPTT gradient. One Adam
    step per active master closes the batch.
    """
    log = log if log is not None else ExchangeLog()
    grad_sums: dict = {}
    loss_sums: dict = {}
    for rng_ch, rng_factory in rng_pairs:
        gains = sample_gains(cfg, Placement(ap_xy, ue_xy), rng_ch)
        masters = select_masters(gains)
        pilots = assign_pilots(gains, masters, cfg.pilot_symbols)
        active_masters = [int(m) for m in np.unique(masters)]

        views, traces, own_rows_slot = {}, {}, {}
        row_sources, rows_global = {}, {}
        for m in active_masters:
            view = build_local_view(nmap, m, gains, masters, ue_xy, pilots)
            trace = _local_forward(view, models[m], cfg, tcfg.pilot_inputs)
            own = view.own_rows
            sampled = sample_activations(
                trace.probs[own], view.master_slots[own],
                rng_factory(m), force_master=tcfg.master_forcing,
            )
            sampled[:, ~view.live] = 0
            views[m], traces[m], own_rows_slot[m] = view, trace, sampled
            for i, ue in enumerate(view.ue_ids[own]):
                row_sources[int(ue)] = m
                rows_global[int(ue)] = _scatter_rows(sampled[i : i + 1], view, gains.shape[1])[0]
        delivered = exchange_activations(nmap, row_sources, rows_global, log)

        for m in active_masters:
            view = views[m]
            activity = _assemble_local_activity(view, own_rows_slot[m], delivered.get(m, {}))
            live = view.live
            local_gamma = gamma_matrix(view.gains[:, live], view.pilots, cfg)
            g_live = grad_activations(
                view.gains[:, live], local_gamma, activity[:, live].astype(float),
                view.pilots, tcfg.objective, cfg,
            )
            g = np.zeros(view.gains.shape)
            g[:, live] = g_live
            # only the rows this master decides couple into its loss
            dprobs = np.zeros_like(traces[m].probs)
            dprobs[view.own_rows] = g[view.own_rows]
            loss, dprobs = training_loss(traces[m].probs, dprobs)
            grads = model_backward(models[m], traces[m], dprobs)
            if m in grad_sums:
                grad_sums[m] = [a + b for a, b in zip(grad_sums[m], grads)]
                loss_sums[m] += loss
            else:
                grad_sums[m] = grads
                loss_sums[m] = loss
    for m, grads in grad_sums.items():
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDiverged(f"non-finite gradient at master {m}")
        adam_step(models[m], grads, opts[m], tcfg.lr)
    return {"losses": loss_sums, "exchange": log}


def distributed_train(
    tcfg: TrainConfig,
    cfg: ExperimentConfig,
    nmap: NeighborhoodMap,
    ap_xy: np.ndarray,
    train_ue_xy: np.ndarray,
    models: dict,
):
    """Full distributed schedule mirroring the centralized loop."""
    opts = {ap: AdamState.zeros_like(m) for ap, m in models.items()}
    log_rows = []
    for epoch in range(tcfg.epochs):
        order = stream(tcfg.seed, TAG_SHUFFLE, epoch).permutation(train_ue_xy.shape[0])
        for drop_idx in order:
            xlog = ExchangeLog()
            pairs = [
                (
                    stream(tcfg.seed, TAG_CHANNEL, epoch, drop_idx, r),
                    lambda m, _e=epoch, _d=drop_idx, _r=r: stream(
                        tcfg.seed, TAG_SAMPLE, _e, _d, _r, TAG_MASTER, m
                    ),
                )
                for r in range(tcfg.batch_size)
            ]
            stats = distributed_train_step(
                nmap, models, opts, cfg, tcfg, ap_xy, train_ue_xy[drop_idx], pairs, xlog
            )
            log_rows.append(
                (epoch, int(drop_idx), float(sum(stats["losses"].values())),
                 xlog.messages, xlog.rounds)
            )
    return models, log_rows


def make_distributed_policy(nmap: NeighborhoodMap, models: dict, pilot_inputs=False):
    def policy(gains, ue_xy, masters, pilots, cfg):
        return distributed_infer(
            nmap, models, gains, masters, ue_xy, cfg, pilots, pilot_inputs
        )

    return policy
