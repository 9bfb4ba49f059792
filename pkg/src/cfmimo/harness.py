"""Experiment orchestration: datasets, baselines, training, validation.

Every artifact embeds the configuration hash and the seed that produced it,
and rerunning any subcommand with unchanged config and seed reproduces the
result files byte for byte (the training metrics log additionally carries
wall-clock timings and is exempt from that guarantee). Vectors and CDFs are
CSV; summaries are JSON; nothing here plots.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .association import (
    pilot_strategy_clusters,
    select_masters,
    top_m_clusters,
)
from .channel import draw_shadowing
from .config import ExperimentConfig, config_hash
from .distributed import (
    build_neighborhoods,
    distributed_train,
    init_local_models,
    make_distributed_policy,
)
from .errors import CheckpointError, ConfigError
from .metrics import (
    ObjectiveSpec,
    allocate_power,
    fd_grad_oracle,
    gamma_matrix,
    grad_activations,
    mc_validate_sinr,
    objective_eval,
    relaxed_objective,
    sinr_se,
)
from .model import (
    init_params,
    load_checkpoint,
    model_backward,
    model_forward,
    order_chain,
    save_checkpoint,
)
from .scenario import build_scenario, load_drops, save_drops
from .streams import TAG_INIT, stream
from .training import (
    TrainConfig,
    evaluate_policy,
    make_model_policy,
    train,
)
from .association import assign_pilots

__all__ = [
    "empirical_cdf",
    "summarize",
    "STRATEGIES",
    "make_strategy",
    "run_generate",
    "run_baseline",
    "run_train",
    "run_eval",
    "run_validate",
    "validation_checks",
]


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def empirical_cdf(values):
    """Right-continuous empirical CDF: sorted values with fractions (i+1)/n."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empirical_cdf needs at least one value")
    ordered = np.sort(values)
    fractions = np.arange(1, ordered.size + 1) / ordered.size
    return ordered, fractions


def summarize(records_by_strategy: dict) -> dict:
    """Per-strategy arithmetic means of the three reported metrics."""
    out = {}
    for name, records in records_by_strategy.items():
        out[name] = {
            "drops": len(records),
            "mean_se_sum": float(np.mean([r.se_sum for r in records])),
            "mean_se_min": float(np.mean([r.se_min for r in records])),
            "mean_connections": float(np.mean([r.connections for r in records])),
        }
    return out


def render_summary_table(summary: dict) -> str:
    header = f"{'strategy':<18}{'SE sum':>10}{'SE min':>10}{'connections':>14}{'drops':>8}"
    lines = [header, "-" * len(header)]
    for name in sorted(summary):
        s = summary[name]
        lines.append(
            f"{name:<18}{s['mean_se_sum']:>10.3f}{s['mean_se_min']:>10.3f}"
            f"{s['mean_connections']:>14.2f}{s['drops']:>8d}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Strategy registry
# ---------------------------------------------------------------------------


def _top_factory(cfg, args):
    m = args.get("m")
    if m is None:
        raise ConfigError("the 'top' strategy needs --m")
    return lambda gains, ue_xy, masters, pilots, c: top_m_clusters(gains, int(m))


def _pilot_factory(cfg, args):
    return lambda gains, ue_xy, masters, pilots, c: pilot_strategy_clusters(gains, pilots)


def _masters_factory(cfg, args):
    def policy(gains, ue_xy, masters, pilots, c):
        clusters = np.zeros(gains.shape, dtype=np.int8)
        clusters[np.arange(len(masters)), masters] = 1
        return clusters

    return policy


STRATEGIES = {
    "top": _top_factory,
    "pilot": _pilot_factory,
    "masters": _masters_factory,
}


def make_strategy(name: str, cfg: ExperimentConfig, **args):
    if name not in STRATEGIES:
        raise ConfigError(f"unknown strategy {name!r}; available: {sorted(STRATEGIES)}")
    return STRATEGIES[name](cfg, args)


# ---------------------------------------------------------------------------
# Artifact I/O (deterministic formatting throughout)
# ---------------------------------------------------------------------------


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_records_csv(path, records, strategy, cfg_hash, seed):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        n_ues = len(records[0].per_ue_se) if records else 0
        cols = ",".join(f"se_ue{i + 1}" for i in range(n_ues))
        fh.write(f"drop,strategy,se_sum,se_min,connections,{cols}\n")
        for r in records:
            per_ue = ",".join(repr(float(v)) for v in r.per_ue_se)
            fh.write(
                f"{r.drop},{strategy},{r.se_sum!r},{r.se_min!r},{r.connections},{per_ue}\n"
            )


def _write_cdf_csv(path, values, cfg_hash, seed):
    xs, fs = empirical_cdf(values)
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        fh.write("value,fraction\n")
        for x, f in zip(xs, fs):
            fh.write(f"{float(x)!r},{float(f)!r}\n")


def _write_metrics_csv(path, rows, header, cfg_hash, seed):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash} seed={seed}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def run_generate(cfg: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir)
    scn = build_scenario(cfg)
    save_drops(scn, out / "drops")
    return out / "drops"


def _ensure_scenario(cfg, out_dir):
    return load_drops(Path(out_dir) / "drops", cfg)


def _objective_from_args(name: str, lam: float | None) -> ObjectiveSpec:
    if name == "balance":
        return ObjectiveSpec("balance", penalty=0.04 if lam is None else lam)
    return ObjectiveSpec(name)


def run_baseline(cfg, out_dir, strategy_name, m=None) -> dict:
    scn = _ensure_scenario(cfg, out_dir)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    label = f"{strategy_name}_m{m}" if strategy_name == "top" else strategy_name
    policy = make_strategy(strategy_name, cfg, m=m)
    result = evaluate_policy(policy, cfg, scn.ap_xy, scn.test_ue_xy, cfg.seed)
    chash = config_hash(cfg)
    out = Path(out_dir)
    _write_records_csv(out / f"baseline_{label}_records.csv", result.records, label, chash, cfg.seed)
    _write_cdf_csv(
        out / f"baseline_{label}_cdf_se_sum.csv",
        [r.se_sum for r in result.records], chash, cfg.seed,
    )
    summary = summarize({label: result.records})
    _write_json(
        out / f"baseline_{label}_summary.json",
        {"config_hash": chash, "seed": cfg.seed, "summary": summary},
    )
    return summary


def run_train(
    cfg,
    out_dir,
    objective_name,
    lam=None,
    epochs=200,
    batch_size=64,
    lr=1e-5,
    hidden_size=512,
    fc_hidden=(256, 128),
    pilot_inputs=False,
    distributed=False,
    template="3x3",
    train_drops=None,
    eval_every=0,
):
    scn = _ensure_scenario(cfg, out_dir)
    objective = _objective_from_args(objective_name, lam)
    tcfg = TrainConfig(
        epochs=epochs, batch_size=batch_size, objective=objective, lr=lr,
        eval_every=eval_every, seed=cfg.seed, pilot_inputs=pilot_inputs,
    )
    drops = scn.train_ue_xy if train_drops is None else scn.train_ue_xy[:train_drops]
    chash = config_hash(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"train_{objective_name}" + ("_distributed" if distributed else "")

    if distributed:
        nmap = build_neighborhoods(cfg, template)
        models = init_local_models(
            nmap, cfg, hidden_size, fc_hidden, cfg.seed, pilot_inputs
        )
        models, rows = distributed_train(tcfg, cfg, nmap, scn.ap_xy, drops, models)
        ckpt_dir = out / tag
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        for ap, params in models.items():
            save_checkpoint(params, ckpt_dir / f"ap_{ap:03d}.ckpt", pilot_inputs)
        _write_json(
            ckpt_dir / "topology.json",
            {
                "config_hash": chash,
                "template": template,
                "slots": {str(ap): nmap.slots[ap].tolist() for ap in range(cfg.num_aps)},
                "groups": {
                    str(ap): nmap.group(ap).tolist() for ap in range(cfg.num_aps)
                },
            },
        )
        _write_metrics_csv(
            out / f"{tag}_metrics.csv", rows,
            "epoch,drop,batch_loss,messages,rounds", chash, cfg.seed,
        )
        return ckpt_dir
    d = cfg.num_aps + 2 + (cfg.pilot_symbols if pilot_inputs else 0)
    params = init_params(
        hidden_size, d, (*fc_hidden, cfg.num_aps), stream(cfg.seed, TAG_INIT)
    )
    print(f"model: hidden={hidden_size} input={d} head={params.fc_widths} "
          f"parameters={params.num_params()}")
    ckpt = out / f"{tag}.ckpt"
    params, rows = train(tcfg, cfg, scn.ap_xy, drops, params, checkpoint_path=ckpt)
    _write_metrics_csv(
        out / f"{tag}_metrics.csv", rows,
        "epoch,drop,mean_sampled_objective,mean_thresholded_objective,"
        "mean_connections,wall_seconds",
        chash, cfg.seed,
    )
    return ckpt


def run_eval(cfg, out_dir, checkpoint, label="policy", distributed=False, template="3x3"):
    scn = _ensure_scenario(cfg, out_dir)
    chash = config_hash(cfg)
    if distributed:
        ckpt_dir = Path(checkpoint)
        nmap = build_neighborhoods(cfg, template)
        models = {}
        for ap in range(cfg.num_aps):
            params, pilot_inputs = load_checkpoint(ckpt_dir / f"ap_{ap:03d}.ckpt")
            _check_structure(params, cfg, pilot_inputs, width=nmap.width)
            models[ap] = params
        policy = make_distributed_policy(nmap, models, pilot_inputs)
    else:
        params, pilot_inputs = load_checkpoint(checkpoint)
        _check_structure(params, cfg, pilot_inputs, width=cfg.num_aps)
        policy = make_model_policy(params, pilot_inputs)
    result = evaluate_policy(policy, cfg, scn.ap_xy, scn.test_ue_xy, cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_records_csv(out / f"eval_{label}_records.csv", result.records, label, chash, cfg.seed)
    _write_cdf_csv(
        out / f"eval_{label}_cdf_se_sum.csv",
        [r.se_sum for r in result.records], chash, cfg.seed,
    )
    summary = summarize({label: result.records})
    _write_json(
        out / f"eval_{label}_summary.json",
        {"config_hash": chash, "seed": cfg.seed, "summary": summary},
    )
    return summary


def _check_structure(params, cfg, pilot_inputs, width):
    expected_d = width + 2 + (cfg.pilot_symbols if pilot_inputs else 0)
    if params.input_size != expected_d or params.output_size != width:
        raise CheckpointError(
            f"checkpoint structure (d={params.input_size}, out={params.output_size}) "
            f"does not match the configuration (d={expected_d}, out={width})"
        )


# ---------------------------------------------------------------------------
# Validation oracles (the `validate` subcommand)
# ---------------------------------------------------------------------------


def _check_activation_gradients(seed=0):
    cfg = ExperimentConfig(
        num_aps=25, num_ues=4, pilot_symbols=2, noise_dbm=30.0,
        ue_power_w=1.0, max_ap_power_w=1.0,
    )
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.2, 2.0, (4, 5))
    pilots = assign_pilots(gains, select_masters(gains), 2)
    gamma = gamma_matrix(gains, pilots, cfg)
    worst_interior, worst_boundary = 0.0, 0.0
    for kind, kw in (("sum", {}), ("balance", {"penalty": 0.04}), ("min", {})):
        spec = ObjectiveSpec(kind, **kw)
        a = rng.uniform(0.1, 0.9, (4, 5))
        an = grad_activations(gains, gamma, a, pilots, spec, cfg)
        fd = fd_grad_oracle(gains, gamma, a, pilots, spec, cfg, eps=1e-6)
        rel = np.abs(an - fd) / np.maximum(np.abs(an) + np.abs(fd), 1e-9)
        worst_interior = max(worst_interior, float(rel.max()))
        # binary point as sampled in training: dead column, masters forced on
        # (an all-zero row would tie the min objective's argmin at SE = 0,
        # where a chosen subgradient and a directional derivative differ)
        ab = (rng.random((4, 5)) < 0.5).astype(float)
        ab[:, 2] = 0.0
        ab[np.arange(4), select_masters(gains)] = 1.0
        an = grad_activations(gains, gamma, ab, pilots, spec, cfg)
        fd = fd_grad_oracle(gains, gamma, ab, pilots, spec, cfg, eps=1e-7)
        rel = np.abs(an - fd) / np.maximum(np.abs(an) + np.abs(fd), 1e-9)
        worst_boundary = max(worst_boundary, float(rel.max()))
    return {
        "name": "activation_gradient_vs_fd",
        "passed": bool(worst_interior <= 1e-5 and worst_boundary <= 1e-4),
        "tolerance": {"interior": 1e-5, "boundary": 1e-4},
        "value": {"interior": worst_interior, "boundary": worst_boundary},
    }


def _check_bptt(seed=0):
    rng = np.random.default_rng(seed)
    n_ues, n_aps, q = 3, 3, 4
    params = init_params(q, n_aps + 2, (6, n_aps), rng)
    gains = rng.uniform(0.1, 2.0, (n_ues, n_aps))
    inputs = np.concatenate(
        [(10 * np.log10(gains) + 110) / 40, rng.uniform(0, 1, (n_ues, 2))], axis=1
    )
    chain = order_chain(gains, select_masters(gains))
    coupling = rng.normal(size=(n_ues, n_aps))
    trace = model_forward(params, inputs, chain)
    grads = model_backward(params, trace, coupling)

    def loss():
        return float((model_forward(params, inputs, chain).probs * coupling).sum())

    arrays = params.arrays()
    # floor the denominator: below ~1e-6 the central difference of a O(1)
    # loss is pure float64 cancellation noise, not gradient signal
    eps, floor, worst = 1e-5, 1e-6, 0.0
    for _ in range(200):
        ai = rng.integers(len(arrays))
        arr = arrays[ai]
        idx = tuple(rng.integers(s) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = loss()
        arr[idx] = orig - eps
        lo = loss()
        arr[idx] = orig
        fd = (hi - lo) / (2 * eps)
        an = grads[ai][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd) + abs(an), floor))
    return {
        "name": "bptt_vs_fd",
        "passed": bool(worst <= 1e-4),
        "tolerance": 1e-4,
        "value": worst,
    }


def _check_mc_sinr(seed=0, n_trials=100_000):
    cfg = ExperimentConfig(
        num_aps=9, num_ues=2, pilot_symbols=2, area_side_m=200.0, seed=seed
    )
    rng = np.random.default_rng(seed)
    gains = rng.uniform(1e-9, 5e-9, (2, 3))
    masters = select_masters(gains)
    pilots = assign_pilots(gains, masters, cfg.pilot_symbols)
    clusters = np.ones((2, 3), dtype=np.int8)
    power = allocate_power(gains, clusters, cfg.max_ap_power_w)
    gamma = gamma_matrix(gains, pilots, cfg)
    err = mc_validate_sinr(
        gains, gamma, power, clusters, pilots, cfg, n_trials, np.random.default_rng(seed + 1)
    )
    return {
        "name": "monte_carlo_sinr",
        "passed": bool(err.max() <= 0.02),
        "tolerance": 0.02,
        "value": float(err.max()),
    }


def _check_shadow_correlation(seed=0, n_draws=100_000):
    sigma, corr_len = 4.0, 9.0
    ue_xy = np.array([[0.0, 0.0], [9.0, 0.0], [18.0, 0.0]])
    draws = draw_shadowing(ue_xy, sigma, corr_len, n_draws, np.random.default_rng(seed))
    emp = draws.T @ draws / n_draws
    targets = {(0, 0): 16.0, (0, 1): 8.0, (0, 2): 4.0}
    worst_sigmas = 0.0
    for (i, j), target in targets.items():
        # std error of a covariance estimate between jointly normal variables
        se = np.sqrt((emp[i, i] * emp[j, j] + emp[i, j] ** 2) / n_draws)
        worst_sigmas = max(worst_sigmas, abs(emp[i, j] - target) / se)
    return {
        "name": "shadow_correlation",
        "passed": bool(worst_sigmas <= 3.0),
        "tolerance": "3 standard errors",
        "value": float(worst_sigmas),
    }


def _check_relaxation_consistency():
    cfg = ExperimentConfig(
        num_aps=25, num_ues=2, pilot_symbols=2, noise_dbm=30.0,
        ue_power_w=1.0, max_ap_power_w=1.0,
    )
    rng = np.random.default_rng(3)
    gains = rng.uniform(0.2, 2.0, (2, 3))
    pilots = assign_pilots(gains, select_masters(gains), 2)
    gamma = gamma_matrix(gains, pilots, cfg)
    specs = [ObjectiveSpec("sum"), ObjectiveSpec("balance", penalty=0.04), ObjectiveSpec("min")]
    worst = 0.0
    for bits in range(2 ** 6):
        a = np.array([(bits >> i) & 1 for i in range(6)], dtype=float).reshape(2, 3)
        power = allocate_power(gains, a, cfg.max_ap_power_w)
        _, se = sinr_se(gains, gamma, power, a, pilots, cfg)
        for spec in specs:
            v1 = objective_eval(se, a, spec)
            v2 = relaxed_objective(gains, gamma, a, pilots, spec, cfg)
            worst = max(worst, abs(v1 - v2))
    return {
        "name": "relaxation_binary_consistency",
        "passed": bool(worst <= 1e-12),
        "tolerance": 1e-12,
        "value": worst,
    }


def validation_checks(seed=0):
    return [
        _check_activation_gradients(seed),
        _check_bptt(seed),
        _check_mc_sinr(seed),
        _check_shadow_correlation(seed),
        _check_relaxation_consistency(),
    ]


def run_validate(cfg, out_dir, seed=None):
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    checks = validation_checks(cfg.seed if seed is None else seed)
    for c in checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {c['name']}: value={c['value']} tolerance={c['tolerance']}")
    _write_json(
        Path(out_dir) / "validate.json",
        {"config_hash": config_hash(cfg), "checks": checks},
    )
    return all(c["passed"] for c in checks)
