"""AP-UE association primitives: master selection, pilots, heuristics.

A cluster matrix is a binary (K, L) array whose row k marks the APs serving
UE k and whose column l marks the UEs handled by AP l. Every operation here
guarantees no empty rows (each UE keeps at least its master AP). Indices are
0-based in code; serialized artifacts use 1-based ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = [
    "PilotAssignment",
    "select_masters",
    "assign_pilots",
    "top_m_clusters",
    "pilot_strategy_clusters",
    "apply_threshold",
    "copilot_mask",
    "save_clusters_csv",
    "cluster_summary",
]


@dataclass(frozen=True)
class PilotAssignment:
    """pilot_of[k] is UE k's pilot index; pilot_sets[t] lists UEs on pilot t."""

    pilot_of: np.ndarray
    pilot_sets: tuple

    @property
    def num_pilots(self) -> int:
        return len(self.pilot_sets)


def select_masters(gains: np.ndarray) -> np.ndarray:
    """Per-UE index of the AP with the strongest gain; ties to the lowest AP."""
    return np.argmax(gains, axis=1)


def assign_pilots(gains: np.ndarray, masters: np.ndarray, num_pilots: int) -> PilotAssignment:
    """Greedy pilot assignment minimizing same-pilot gain at each UE's master.

    UEs are processed in ascending index (a fixed stand-in for arrival
    order); each receives the pilot whose already-assigned users have the
    smallest summed gain toward the UE's master, ties to the lowest pilot.
    """
    if num_pilots < 1:
        raise ConfigError("need at least one pilot")
    n_ues = gains.shape[0]
    pilot_of = np.empty(n_ues, dtype=np.int64)
    # running per-pilot interference sums at each UE's master, updated lazily
    sets: list[list[int]] = [[] for _ in range(num_pilots)]
    for k in range(n_ues):
        col = gains[:, masters[k]]
        sums = np.array([col[members].sum() if members else 0.0 for members in sets])
        t = int(np.argmin(sums))
        pilot_of[k] = t
        sets[t].append(k)
    return PilotAssignment(pilot_of, tuple(tuple(s) for s in sets))


def copilot_mask(pilots: PilotAssignment) -> np.ndarray:
    """Boolean (K, K): entry (i, k) true iff i != k share a pilot."""
    same = pilots.pilot_of[:, None] == pilots.pilot_of[None, :]
    np.fill_diagonal(same, False)
    return same


def top_m_clusters(gains: np.ndarray, m: int) -> np.ndarray:
    """Each UE connects to its m strongest APs (ties to the lower AP index)."""
    n_ues, n_aps = gains.shape
    if not 1 <= m <= n_aps:
        raise ConfigError(f"m must lie in [1, {n_aps}]; got {m}")
    clusters = np.zeros((n_ues, n_aps), dtype=np.int8)
    # stable sort on descending gain keeps lower AP indices first among ties
    order = np.argsort(-gains, axis=1, kind="stable")[:, :m]
    np.put_along_axis(clusters, order, 1, axis=1)
    return clusters


def pilot_strategy_clusters(gains: np.ndarray, pilots: PilotAssignment) -> np.ndarray:
    """Every AP serves, per pilot, the strongest UE among that pilot's users."""
    n_ues, n_aps = gains.shape
    clusters = np.zeros((n_ues, n_aps), dtype=np.int8)
    for members in pilots.pilot_sets:
        if not members:
            continue
        members = np.asarray(members)
        best = members[np.argmax(gains[members, :], axis=0)]  # (L,)
        clusters[best, np.arange(n_aps)] = 1
    return clusters


def apply_threshold(probs: np.ndarray, threshold: float, masters: np.ndarray) -> np.ndarray:
    """Binarize connection probabilities; strictly above threshold activates.

    The master link is forced on afterwards so no UE is left unserved even
    from an all-below-threshold row.
    """
    clusters = (probs > threshold).astype(np.int8)
    clusters[np.arange(len(masters)), masters] = 1
    return clusters


def save_clusters_csv(clusters: np.ndarray, path) -> None:
    """K rows of L comma-separated 0/1 entries."""
    with open(path, "w") as fh:
        for row in clusters:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def cluster_summary(clusters: np.ndarray) -> str:
    """JSON summary: per-UE cluster sizes and per-AP loads (1-based ids)."""
    return json.dumps(
        {
            "ue_cluster_sizes": {
                str(k + 1): int(n) for k, n in enumerate(clusters.sum(axis=1))
            },
            "ap_loads": {str(l + 1): int(n) for l, n in enumerate(clusters.sum(axis=0))},
            "total_connections": int(clusters.sum()),
        },
        sort_keys=True,
        indent=2,
    )
