"""Network drops and the large-scale channel gain matrix.

The propagation model combines the 3GPP microcell NLoS path loss

    PL_dB(d) = 36.7*log10(d) + 22.7 + 26*log10(f_c),   d in m, f_c in GHz,

with lognormal shadow fading whose dB-domain covariance between two UEs at
planar distance delta is ``sigma^2 * 2^(-delta/corr_len)``; shadowing is
correlated across UEs seen from the same AP and independent across APs. The
gain matrix holds ``10^((SF - PL)/10)`` in linear scale, one row per UE, one
column per AP. AP-UE distances are 3-D: planar distance combined with the
constant AP/UE height difference, which also keeps the path loss finite for a
UE standing right under an AP.

All sampling takes an explicit numpy Generator; nothing here touches global
RNG state, so callers may parallelize over independent streams.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .errors import DomainError, NumericalError

__all__ = [
    "Placement",
    "place_aps",
    "place_ues",
    "path_loss_db",
    "shadow_covariance",
    "draw_shadowing",
    "sample_gains",
    "link_distances",
]

# Diagonal jitter added (relative to sigma^2) before factorizing the shadow
# covariance so co-located UEs do not break the Cholesky decomposition.
_COV_JITTER = 1e-9


@dataclass(frozen=True)
class Placement:
    """AP and UE coordinates of one network drop, meters, shape (n, 2)."""

    ap_xy: np.ndarray
    ue_xy: np.ndarray


def place_aps(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    """Drop APs on a jittered square grid.

    The virtual grid has sqrt(num_aps) nodes per side with spacing
    ``area_side / side``, the first node half a spacing from the corner. Each
    AP is displaced independently per axis by up to ``grid_jitter_frac`` of
    the spacing and clamped to the area. AP index is row-major over the grid
    (y major, x minor), which downstream neighborhood templates rely on.
    """
    side = cfg.grid_side  # raises ConfigError for non-square counts
    spacing = cfg.area_side_m / side
    gy, gx = np.mgrid[0:side, 0:side]
    nodes = np.stack(
        [(gx.ravel() + 0.5) * spacing, (gy.ravel() + 0.5) * spacing], axis=1
    )
    jitter = rng.uniform(
        -cfg.grid_jitter_frac * spacing, cfg.grid_jitter_frac * spacing, size=nodes.shape
    )
    return np.clip(nodes + jitter, 0.0, cfg.area_side_m)


def place_ues(cfg: ExperimentConfig, rng: np.random.Generator, drops: int = 1) -> np.ndarray:
    """Uniform i.i.d. UE positions; shape (drops, num_ues, 2)."""
    return rng.uniform(0.0, cfg.area_side_m, size=(drops, cfg.num_ues, 2))


def path_loss_db(distance_m, carrier_ghz: float):
    """3GPP microcell path loss in dB; valid for carriers in [2, 6] GHz.

    Outside the validity range a warning is recorded but the value is still
    computed. Non-positive distances are a domain error.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise DomainError("path loss requires strictly positive distance")
    if not 2.0 <= carrier_ghz <= 6.0:
        warnings.warn(
            f"carrier {carrier_ghz} GHz outside the [2, 6] GHz validity range",
            stacklevel=2,
        )
    return 36.7 * np.log10(d) + 22.7 + 26.0 * np.log10(carrier_ghz)


def shadow_covariance(ue_xy: np.ndarray, sigma_db: float, corr_len_m: float) -> np.ndarray:
    """dB-domain shadow covariance between UEs: sigma^2 * 2^(-distance/corr_len)."""
    if corr_len_m <= 0:
        raise DomainError("correlation length must be positive")
    diff = ue_xy[:, None, :] - ue_xy[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=-1))
    return sigma_db**2 * np.exp2(-dist / corr_len_m)


def _covariance_sqrt(cov: np.ndarray, sigma_db: float) -> np.ndarray:
    reg = cov + _COV_JITTER * max(sigma_db**2, 1.0) * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(reg)
    except np.linalg.LinAlgError as exc:
        worst = float(np.linalg.eigvalsh(reg).min())
        raise NumericalError(
            f"shadow covariance not factorizable after regularization "
            f"(smallest eigenvalue {worst:.3e})"
        ) from exc


def draw_shadowing(
    ue_xy: np.ndarray, sigma_db: float, corr_len_m: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n independent correlated shadow-fading vectors in dB, shape (n, K)."""
    if sigma_db == 0.0:
        return np.zeros((n, ue_xy.shape[0]))
    chol = _covariance_sqrt(shadow_covariance(ue_xy, sigma_db, corr_len_m), sigma_db)
    return rng.standard_normal((n, ue_xy.shape[0])) @ chol.T


def link_distances(cfg: ExperimentConfig, ap_xy: np.ndarray, ue_xy: np.ndarray) -> np.ndarray:
    """3-D AP-UE distances (K, L): planar separation plus height difference."""
    diff = ue_xy[:, None, :] - ap_xy[None, :, :]
    planar_sq = (diff**2).sum(axis=-1)
    return np.sqrt(planar_sq + cfg.height_diff_m**2)


def sample_gains(
    cfg: ExperimentConfig, placement: Placement, rng: np.random.Generator
) -> np.ndarray:
    """One realization of the (K, L) linear-scale gain matrix.

    Shadow vectors are drawn per AP (independent columns), each correlated
    across UEs through the planar UE-UE covariance.
    """
    dist = link_distances(cfg, placement.ap_xy, placement.ue_xy)
    pl_db = path_loss_db(dist, cfg.carrier_ghz)
    sf_db = draw_shadowing(
        placement.ue_xy, cfg.shadow_std_db, cfg.shadow_corr_m, cfg.num_aps, rng
    ).T  # (K, L), column per AP
    gains = 10.0 ** ((sf_db - pl_db) / 10.0)
    if not np.all(np.isfinite(gains)) or np.any(gains <= 0.0):
        raise NumericalError("gain matrix has non-finite or non-positive entries")
    return gains
