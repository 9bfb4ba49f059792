"""Performance math for the downlink under maximum-ratio precoding.

Closed-form spectral efficiency
-------------------------------
With MMSE channel estimates and MR precoding, UE k's effective SINR is

              M * (sum_{l in C_k} sqrt(rho_kl * gamma_kl))^2
    ---------------------------------------------------------------------
    sum_i sum_l rho_il * beta_kl  +  M * sum_{i copilot k} (sum_{l in C_i}
                sqrt(rho_il * gamma_kl))^2  +  noise

where gamma_kl = tau_p*eta*beta_kl^2 / (tau_p*sum_{i copilot incl. k}
eta*beta_il + noise) is the estimation-quality coefficient, C_k the cluster
of UE k and M the per-AP antenna count. SE_k = prelog * log2(1 + SINR_k).

Per-AP power splits the budget proportionally to sqrt(beta) among served
UEs, so an AP serving anyone transmits exactly its maximum power.

Continuous relaxation
---------------------
For training we extend the objective to fractional memberships a in [0,1]:
the power rule becomes rho_kl(a) = rho_max*a_kl*sqrt(beta_kl)/sum_i
a_il*sqrt(beta_il) and every cluster sum becomes an a-weighted full sum;
cluster sizes become row sums of a. On binary matrices this coincides
exactly with the closed-form evaluation. ``grad_activations`` returns the
hand-derived reverse-mode gradient of that relaxation and is verified
against ``fd_grad_oracle`` (central differences, with second-order one-sided
stencils at the [0,1] boundary).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .association import PilotAssignment, copilot_mask
from .config import ExperimentConfig
from .errors import ConfigError, DomainError

__all__ = [
    "ObjectiveSpec",
    "gamma_matrix",
    "allocate_power",
    "sinr_se",
    "objective_eval",
    "relaxed_objective",
    "grad_activations",
    "fd_grad_oracle",
    "mc_validate_sinr",
]

_LN2 = math.log(2.0)
# Below this column mass the AP is treated as off and partials switch to the
# one-sided growth limit.
_DENOM_GUARD = 1e-30


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which network objective to optimize.

    kind:
      "sum"      weighted sum of spectral efficiencies
      "balance"  sum of SE minus ``penalty`` per active connection
      "min"      worst-UE spectral efficiency
    """

    kind: str
    weights: np.ndarray | None = None    # per-UE weights, "sum" only
    penalty: float = 0.0                 # per-connection cost, "balance" only

    def __post_init__(self):
        if self.kind not in ("sum", "balance", "min"):
            raise ConfigError(f"unknown objective kind {self.kind!r}")
        if self.kind == "balance" and self.penalty <= 0:
            raise ConfigError("balance objective needs a positive penalty")
        if self.weights is not None and np.any(np.asarray(self.weights) < 0):
            raise ConfigError("objective weights must be non-negative")

    def weight_vector(self, n_ues: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(n_ues)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (n_ues,):
            raise ConfigError(f"weights shape {w.shape} != ({n_ues},)")
        return w


def gamma_matrix(
    gains: np.ndarray, pilots: PilotAssignment, cfg: ExperimentConfig
) -> np.ndarray:
    """MMSE estimation-quality coefficients, (K, L); 0 <= gamma <= beta."""
    gains = np.ascontiguousarray(gains, dtype=float)
    tau_p = pilots.num_pilots
    eta = cfg.ue_power_w
    # per-(pilot, AP) total received pilot power, gathered back per UE
    copilot_sum = np.zeros_like(gains)
    for members in pilots.pilot_sets:
        if members:
            idx = np.asarray(members)
            copilot_sum[idx, :] = gains[idx, :].sum(axis=0)
    return tau_p * eta * gains**2 / (tau_p * eta * copilot_sum + cfg.noise_w)


def allocate_power(
    gains: np.ndarray, clusters: np.ndarray, max_power_w: float
) -> np.ndarray:
    """Square-root-proportional downlink power split, (K, L) watts.

    Each AP divides its full budget among the UEs it serves in proportion to
    sqrt(beta); empty APs transmit nothing.
    """
    weighted = np.sqrt(gains) * clusters
    col = weighted.sum(axis=0)
    out = np.zeros_like(gains)
    live = col > 0
    out[:, live] = max_power_w * weighted[:, live] / col[live]
    return out


def sinr_se(
    gains: np.ndarray,
    gamma: np.ndarray,
    power: np.ndarray,
    clusters: np.ndarray,
    pilots: PilotAssignment,
    cfg: ExperimentConfig,
):
    """Closed-form per-UE (SINR, SE) under MR precoding."""
    m_ant = cfg.antennas_per_ap
    amp = np.sqrt(power * gamma) * clusters       # sqrt(rho_kl gamma_kl) on links
    desired = amp.sum(axis=1)
    leak = gains @ power.sum(axis=0)              # all transmitted power seen at k
    # coherent pilot-contamination term: interferer i's powers with k's gamma
    cross = (np.sqrt(power) * clusters) @ np.sqrt(gamma).T   # (i, k)
    coherent = m_ant * (copilot_mask(pilots) * cross**2).sum(axis=0)
    sinr = m_ant * desired**2 / (leak + coherent + cfg.noise_w)
    se = cfg.prelog * np.log2(1.0 + sinr)
    return sinr, se


def objective_eval(se: np.ndarray, clusters: np.ndarray, spec: ObjectiveSpec) -> float:
    if spec.kind == "sum":
        return float(spec.weight_vector(len(se)) @ se)
    if spec.kind == "balance":
        return float(se.sum() - spec.penalty * clusters.sum())
    return float(se.min())


# ---------------------------------------------------------------------------
# Continuous relaxation and its gradient
# ---------------------------------------------------------------------------


@dataclass
class _RelaxedState:
    """Intermediates of the relaxed evaluation kept for the reverse pass."""

    a: np.ndarray
    gains: np.ndarray
    sqrt_b: np.ndarray
    sqrt_g: np.ndarray
    col_mass: np.ndarray      # D_l = sum_i a_il sqrt(beta_il)
    live: np.ndarray          # columns with col_mass above the guard
    amp: np.ndarray           # V_il = a^{3/2} sqrt(rho_max sqrt_b) / sqrt(D)
    col_sq: np.ndarray        # Q_l = sum_i a_il^2 sqrt(beta_il)
    col_pow: np.ndarray       # P_l = rho_max Q_l / D_l
    signal: np.ndarray        # G[i, k] = sum_l V_il sqrt(gamma_kl)
    copilot: np.ndarray
    denom: np.ndarray
    sinr: np.ndarray
    se: np.ndarray


def _relaxed_forward(gains, gamma, a, pilots, cfg) -> _RelaxedState:
    # canonical layout so results do not depend on the caller's array strides
    gains = np.ascontiguousarray(gains, dtype=float)
    gamma = np.ascontiguousarray(gamma, dtype=float)
    a = np.ascontiguousarray(a, dtype=float)
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise DomainError("activations must lie in [0, 1]")
    rho_max = cfg.max_ap_power_w
    m_ant = cfg.antennas_per_ap
    sqrt_b = np.sqrt(gains)
    sqrt_g = np.sqrt(gamma)
    col_mass = (a * sqrt_b).sum(axis=0)
    live = col_mass >= _DENOM_GUARD
    inv_sqrt_mass = np.zeros_like(col_mass)
    inv_sqrt_mass[live] = 1.0 / np.sqrt(col_mass[live])
    amp = a**1.5 * np.sqrt(rho_max * sqrt_b) * inv_sqrt_mass
    col_sq = (a**2 * sqrt_b).sum(axis=0)
    col_pow = np.zeros_like(col_mass)
    col_pow[live] = rho_max * col_sq[live] / col_mass[live]
    signal = amp @ sqrt_g.T                       # (i, k)
    copilot = copilot_mask(pilots)
    desired = np.diag(signal)
    leak = gains @ col_pow
    coherent = m_ant * (copilot * signal**2).sum(axis=0)
    denom = leak + coherent + cfg.noise_w
    sinr = m_ant * desired**2 / denom
    se = cfg.prelog * np.log2(1.0 + sinr)
    return _RelaxedState(
        a=a, gains=gains, sqrt_b=sqrt_b, sqrt_g=sqrt_g, col_mass=col_mass, live=live,
        amp=amp, col_sq=col_sq, col_pow=col_pow, signal=signal,
        copilot=copilot, denom=denom, sinr=sinr, se=se,
    )


def _objective_from_state(state: _RelaxedState, spec: ObjectiveSpec) -> float:
    if spec.kind == "sum":
        return float(spec.weight_vector(len(state.se)) @ state.se)
    if spec.kind == "balance":
        return float(state.se.sum() - spec.penalty * state.a.sum())
    return float(state.se.min())


def relaxed_objective(gains, gamma, a, pilots, spec, cfg) -> float:
    """Objective value at fractional memberships; exact on binary input."""
    return _objective_from_state(_relaxed_forward(gains, gamma, a, pilots, cfg), spec)


def _se_sensitivity(state: _RelaxedState, spec: ObjectiveSpec) -> np.ndarray:
    """d(objective)/d(SE_k); for "min" only the lowest-index argmin is active."""
    n = len(state.se)
    if spec.kind == "sum":
        return spec.weight_vector(n).astype(float)
    if spec.kind == "balance":
        return np.ones(n)
    t = np.zeros(n)
    t[int(np.argmin(state.se))] = 1.0
    return t


def grad_activations(gains, gamma, a, pilots, spec, cfg) -> np.ndarray:
    """Analytic gradient of ``relaxed_objective`` w.r.t. every activation.

    Reverse pass through the relaxed evaluation. Columns below the mass
    guard (APs serving nobody) use the one-sided growth derivative: bringing
    a first fractional user to an idle AP turns on full-budget transmission,
    so d(amp)/da = sqrt(rho_max) and d(col_pow)/da = rho_max there.
    """
    state = _relaxed_forward(gains, gamma, a, pilots, cfg)
    rho_max = cfg.max_ap_power_w
    m_ant = cfg.antennas_per_ap

    d_se = _se_sensitivity(state, spec)
    d_sinr = d_se * cfg.prelog / ((1.0 + state.sinr) * _LN2)
    desired = np.diag(state.signal)
    g_desired = d_sinr * 2.0 * m_ant * desired / state.denom
    g_denom = -d_sinr * state.sinr / state.denom

    g_colpow = state.gains.T @ g_denom                         # (L,)
    g_signal = state.copilot * (2.0 * m_ant * state.signal * g_denom[None, :])
    g_signal[np.diag_indices_from(g_signal)] += g_desired
    g_amp = g_signal @ state.sqrt_g                            # (K, L)

    grad = np.zeros_like(state.a)
    live = state.live
    if np.any(live):
        inv_mass = 1.0 / state.col_mass[live]
        # direct amplitude channel: d amp / d a = 1.5 sqrt(a) c / sqrt(D)
        grad[:, live] += (
            g_amp[:, live]
            * 1.5
            * np.sqrt(state.a[:, live])
            * np.sqrt(rho_max * state.sqrt_b[:, live])
            * np.sqrt(inv_mass)[None, :]
        )
        # column-mass channel collects amp and power sensitivities
        g_mass = -(g_amp[:, live] * state.amp[:, live]).sum(axis=0) * 0.5 * inv_mass
        g_mass -= g_colpow[live] * state.col_pow[live] * inv_mass
        g_colsq = g_colpow[live] * rho_max * inv_mass
        grad[:, live] += g_colsq[None, :] * 2.0 * state.a[:, live] * state.sqrt_b[:, live]
        grad[:, live] += g_mass[None, :] * state.sqrt_b[:, live]
    if np.any(~live):
        dead = ~live
        grad[:, dead] += g_amp[:, dead] * math.sqrt(rho_max)
        grad[:, dead] += g_colpow[dead][None, :] * rho_max
    if spec.kind == "balance":
        grad -= spec.penalty
    return grad


def fd_grad_oracle(gains, gamma, a, pilots, spec, cfg, eps: float = 1e-6) -> np.ndarray:
    """Numerical gradient of the relaxed objective.

    Central differences inside [0,1] with one-sided fallbacks at the
    boundary. Entries at 0 are special: the signal amplitude scales as
    a^(3/2) there, so a polynomial stencil in a converges only as sqrt(eps).
    Stepping in u with a = u^2 turns that term into u^3, which the one-sided
    stencil cancels exactly, recovering the one-sided derivative to O(eps).
    Entries at 1 are smooth and use a plain second-order backward stencil.
    """
    if not 0.0 < eps <= 1e-3:
        raise DomainError("eps must lie in (0, 1e-3]")
    a = np.asarray(a, dtype=float)

    def f(x):
        return relaxed_objective(gains, gamma, x, pilots, spec, cfg)

    f0 = f(a)
    grad = np.zeros_like(a)
    for idx in np.ndindex(*a.shape):
        v = a[idx]
        x = a.copy()
        if v + eps <= 1.0 and v - eps >= 0.0:
            x[idx] = v + eps
            hi = f(x)
            x[idx] = v - eps
            lo = f(x)
            grad[idx] = (hi - lo) / (2.0 * eps)
        elif v - eps < 0.0 and v + 4.0 * eps <= 1.0:
            # growth direction from (or near) zero, curvature-robust stencil
            x[idx] = v + eps
            f1 = f(x)
            x[idx] = v + 4.0 * eps
            f2 = f(x)
            grad[idx] = (8.0 * f1 - f2 - 7.0 * f0) / (4.0 * eps)
        else:
            x[idx] = v - eps
            f1 = f(x)
            x[idx] = v - 2.0 * eps
            f2 = f(x)
            grad[idx] = (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * eps)
    return grad


# ---------------------------------------------------------------------------
# Monte-Carlo validation of the closed form
# ---------------------------------------------------------------------------


def mc_validate_sinr(
    gains,
    gamma,
    power,
    clusters,
    pilots,
    cfg,
    n_trials: int,
    rng: np.random.Generator,
    chunk: int = 20000,
) -> np.ndarray:
    """Per-UE relative error between empirical and closed-form SINR.

    Simulates the full small-scale pipeline: Rayleigh channels, despread
    pilot observations with receiver noise, MMSE estimates, MR precoders
    normalized by their expected energy, and the downlink expectations that
    define the effective SINR.
    """
    if n_trials < 10_000:
        raise ConfigError("need at least 1e4 trials for a meaningful estimate")
    n_ues, n_aps = gains.shape
    m_ant = cfg.antennas_per_ap
    tau_p = pilots.num_pilots
    eta = cfg.ue_power_w
    noise = cfg.noise_w

    # MMSE scaling per link and precoder normalization sqrt(rho / (M gamma))
    est_coef = gamma / (np.sqrt(tau_p * eta) * gains)
    w_coef = np.sqrt(power / (m_ant * gamma)) * clusters

    sum_desired = np.zeros(n_ues, dtype=complex)
    sum_sq = np.zeros((n_ues, n_ues))
    done = 0
    while done < n_trials:
        n = min(chunk, n_trials - done)
        h = np.sqrt(gains / 2.0)[None, :, :, None] * (
            rng.standard_normal((n, n_ues, n_aps, m_ant))
            + 1j * rng.standard_normal((n, n_ues, n_aps, m_ant))
        )
        pilot_noise = np.sqrt(noise / 2.0) * (
            rng.standard_normal((n, tau_p, n_aps, m_ant))
            + 1j * rng.standard_normal((n, tau_p, n_aps, m_ant))
        )
        despread = pilot_noise
        for t, members in enumerate(pilots.pilot_sets):
            if members:
                despread[:, t] += math.sqrt(tau_p * eta) * h[:, list(members)].sum(axis=1)
        h_hat = est_coef[None, :, :, None] * despread[:, pilots.pilot_of]
        precoder = w_coef[None, :, :, None] * h_hat
        rx = np.einsum("nklm,nilm->nki", h.conj(), precoder)
        sum_desired += np.einsum("nkk->k", rx)
        sum_sq += (np.abs(rx) ** 2).sum(axis=0)
        done += n

    mean_desired = sum_desired / n_trials
    mean_sq = sum_sq / n_trials
    signal = np.abs(mean_desired) ** 2
    denom = mean_sq.sum(axis=1) - signal + noise
    empirical = signal / denom
    closed, _ = sinr_se(gains, gamma, power, clusters, pilots, cfg)
    return np.abs(empirical - closed) / closed
