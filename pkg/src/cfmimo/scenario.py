"""Scenario assembly and the on-disk drops cache.

A scenario bundles the configuration with its deterministic geometry: one AP
placement plus the training and test UE drops, all derived from the config
seed. The cache is a directory of raw ``.npy`` arrays next to a ``meta.json``
recording the config hash and seed; raw arrays (unlike zip containers) carry
no timestamps, so regenerating the cache is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import place_aps, place_ues
from .config import ExperimentConfig, config_hash
from .errors import ConfigError
from .streams import TAG_APS, TAG_TEST_UES, TAG_TRAIN_UES, stream

__all__ = ["Scenario", "build_scenario", "save_drops", "load_drops"]

_FILES = ("ap_xy.npy", "train_ue_xy.npy", "test_ue_xy.npy")


@dataclass(frozen=True)
class Scenario:
    cfg: ExperimentConfig
    ap_xy: np.ndarray
    train_ue_xy: np.ndarray   # (train_drops, K, 2)
    test_ue_xy: np.ndarray    # (test_drops, K, 2)


def build_scenario(cfg: ExperimentConfig) -> Scenario:
    return Scenario(
        cfg=cfg,
        ap_xy=place_aps(cfg, stream(cfg.seed, TAG_APS)),
        train_ue_xy=place_ues(cfg, stream(cfg.seed, TAG_TRAIN_UES), cfg.train_drops),
        test_ue_xy=place_ues(cfg, stream(cfg.seed, TAG_TEST_UES), cfg.test_drops),
    )


def save_drops(scn: Scenario, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "ap_xy.npy", scn.ap_xy)
    np.save(directory / "train_ue_xy.npy", scn.train_ue_xy)
    np.save(directory / "test_ue_xy.npy", scn.test_ue_xy)
    meta = {"config_hash": config_hash(scn.cfg), "seed": scn.cfg.seed}
    (directory / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_drops(directory, cfg: ExperimentConfig) -> Scenario:
    directory = Path(directory)
    missing = [f for f in (*_FILES, "meta.json") if not (directory / f).exists()]
    if missing:
        raise ConfigError(
            f"drops cache incomplete under {directory} (missing {', '.join(missing)}); "
            f"run the 'generate' subcommand first"
        )
    meta = json.loads((directory / "meta.json").read_text())
    if meta["config_hash"] != config_hash(cfg):
        raise ConfigError(
            f"drops cache under {directory} was generated for config {meta['config_hash']}, "
            f"current config is {config_hash(cfg)}; regenerate"
        )
    return Scenario(
        cfg=cfg,
        ap_xy=np.load(directory / "ap_xy.npy"),
        train_ue_xy=np.load(directory / "train_ue_xy.npy"),
        test_ue_xy=np.load(directory / "test_ue_xy.npy"),
    )
