import json

import numpy as np
import pytest

from cfmimo.cli import main
from cfmimo.config import ExperimentConfig, config_hash, load_scenario, save_scenario
from cfmimo.errors import CheckpointError, ConfigError
from cfmimo.harness import (
    empirical_cdf,
    make_strategy,
    render_summary_table,
    run_baseline,
    run_eval,
    run_generate,
    run_train,
    summarize,
)
from cfmimo.scenario import build_scenario, load_drops, save_drops
from cfmimo.training import DropResult

SMALL_CFG_TEXT = """
# desk-scale scenario
area_side_m = 300
num_aps = 9
num_ues = 4
pilot_symbols = 4
train_drops = 6
test_drops = 5
seed = 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text(SMALL_CFG_TEXT)
    return load_scenario(path), path


# -- statistics ---------------------------------------------------------------


def test_empirical_cdf_examples():
    xs, fs = empirical_cdf([3.0, 1.0, 2.0])
    assert xs.tolist() == [1.0, 2.0, 3.0]
    assert np.allclose(fs, [1 / 3, 2 / 3, 1.0])
    xs, fs = empirical_cdf([5.0, 5.0, 5.0])
    assert np.all(xs == 5.0) and fs[-1] == 1.0
    with pytest.raises(ValueError):
        empirical_cdf([])


def test_merged_cdf_lies_between_inputs():
    rng = np.random.default_rng(0)
    for _ in range(30):
        a = rng.normal(size=rng.integers(3, 12))
        b = rng.normal(loc=0.5, size=rng.integers(3, 12))
        merged = np.concatenate([a, b])

        def cdf_at(sample, x):
            return np.searchsorted(np.sort(sample), x, side="right") / len(sample)

        grid = np.unique(merged)
        fa = np.array([cdf_at(a, x) for x in grid])
        fb = np.array([cdf_at(b, x) for x in grid])
        fm = np.array([cdf_at(merged, x) for x in grid])
        assert np.all(fm <= np.maximum(fa, fb) + 1e-12)
        assert np.all(fm >= np.minimum(fa, fb) - 1e-12)


def _record(drop, se_sum, se_min, conn):
    return DropResult(drop, se_sum, se_min, conn, np.array([se_sum]))


def test_summarize_single_record_and_offsets():
    summary = summarize({"x": [_record(0, 10.0, 1.0, 40)]})
    assert summary["x"]["mean_se_sum"] == 10.0
    assert summary["x"]["drops"] == 1
    top3 = [_record(i, 20.0, 1.0, 30) for i in range(5)]
    top4 = [_record(i, 21.0, 1.1, 40) for i in range(5)]
    summary = summarize({"top3": top3, "top4": top4})
    assert summary["top4"]["mean_connections"] - summary["top3"]["mean_connections"] == 10.0
    assert "top3" in render_summary_table(summary)


# -- config files --------------------------------------------------------------


def test_scenario_file_round_trip(tmp_path, small_cfg):
    cfg, _ = small_cfg
    assert cfg.num_aps == 9 and cfg.seed == 2
    out = tmp_path / "copy.cfg"
    save_scenario(cfg, out)
    assert load_scenario(out) == cfg


def test_unknown_keys_listed(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_aps = 9\nbogus_key = 3\nwhat = 1\n")
    with pytest.raises(ConfigError, match="bogus_key, what"):
        load_scenario(path)


def test_invalid_pilot_budget_rejected():
    with pytest.raises(ConfigError, match="pilot_symbols"):
        ExperimentConfig(pilot_symbols=0)
    with pytest.raises(ConfigError, match="pilot_symbols"):
        ExperimentConfig(pilot_symbols=300, coherence_symbols=200)


# -- drops cache ---------------------------------------------------------------


def test_drops_cache_round_trip(tmp_path, small_cfg):
    cfg, _ = small_cfg
    scn = build_scenario(cfg)
    save_drops(scn, tmp_path / "drops")
    loaded = load_drops(tmp_path / "drops", cfg)
    assert np.array_equal(loaded.ap_xy, scn.ap_xy)
    assert np.array_equal(loaded.train_ue_xy, scn.train_ue_xy)
    assert np.array_equal(loaded.test_ue_xy, scn.test_ue_xy)


def test_missing_cache_instructive(tmp_path, small_cfg):
    cfg, _ = small_cfg
    with pytest.raises(ConfigError, match="generate"):
        load_drops(tmp_path / "nothere", cfg)


def test_stale_cache_detected(tmp_path, small_cfg):
    cfg, _ = small_cfg
    save_drops(build_scenario(cfg), tmp_path / "drops")
    with pytest.raises(ConfigError, match="regenerate"):
        load_drops(tmp_path / "drops", cfg.replace(seed=99))


# -- strategies -----------------------------------------------------------------


def test_strategy_registry(small_cfg):
    cfg, _ = small_cfg
    with pytest.raises(ConfigError, match="unknown strategy"):
        make_strategy("nope", cfg)
    with pytest.raises(ConfigError, match="--m"):
        make_strategy("top", cfg)


def test_baseline_artifacts_and_contents(tmp_path, small_cfg):
    cfg, _ = small_cfg
    run_generate(cfg, tmp_path)
    summary = run_baseline(cfg, tmp_path, "top", m=2)
    assert summary["top_m2"]["mean_connections"] == 8.0  # 4 UEs x 2 APs
    records = (tmp_path / "baseline_top_m2_records.csv").read_text().splitlines()
    assert records[0].startswith(f"# config_hash={config_hash(cfg)}")
    assert records[1].split(",")[:5] == ["drop", "strategy", "se_sum", "se_min", "connections"]
    assert len(records) == 2 + cfg.test_drops
    payload = json.loads((tmp_path / "baseline_top_m2_summary.json").read_text())
    assert payload["config_hash"] == config_hash(cfg)
    cdf = (tmp_path / "baseline_top_m2_cdf_se_sum.csv").read_text().splitlines()
    assert cdf[1] == "value,fraction"
    assert len(cdf) == 2 + cfg.test_drops


def test_summaries_recomputable_from_records(tmp_path, small_cfg):
    cfg, _ = small_cfg
    run_generate(cfg, tmp_path)
    summary = run_baseline(cfg, tmp_path, "masters")
    lines = (tmp_path / "baseline_masters_records.csv").read_text().splitlines()[2:]
    se_sums = [float(l.split(",")[2]) for l in lines]
    assert np.mean(se_sums) == pytest.approx(summary["masters"]["mean_se_sum"], abs=1e-12)


# -- train / eval ----------------------------------------------------------------


def test_train_eval_cycle_and_structure_check(tmp_path, small_cfg):
    cfg, _ = small_cfg
    run_generate(cfg, tmp_path)
    ckpt = run_train(
        cfg, tmp_path, "sum", epochs=1, batch_size=2, lr=1e-3,
        hidden_size=8, fc_hidden=(8,), train_drops=2,
    )
    assert ckpt.exists()
    summary = run_eval(cfg, tmp_path, ckpt, label="sumpol")
    assert summary["sumpol"]["mean_connections"] >= cfg.num_ues
    # structural mismatch: different AP count now expected by the config
    bigger = cfg.replace(num_aps=25, area_side_m=700.0)
    run_generate(bigger, tmp_path / "other")
    with pytest.raises(CheckpointError, match="does not match"):
        run_eval(bigger, tmp_path / "other", ckpt)


def test_distributed_train_eval_cycle(tmp_path, small_cfg):
    cfg, _ = small_cfg
    run_generate(cfg, tmp_path)
    ckpt_dir = run_train(
        cfg, tmp_path, "sum", epochs=1, batch_size=2, lr=1e-3,
        hidden_size=8, fc_hidden=(8,), train_drops=2,
        distributed=True, template="3x3",
    )
    assert (ckpt_dir / "ap_000.ckpt").exists()
    topo = json.loads((ckpt_dir / "topology.json").read_text())
    assert topo["template"] == "3x3"
    assert len(topo["slots"]) == cfg.num_aps
    summary = run_eval(cfg, tmp_path, ckpt_dir, label="dist", distributed=True, template="3x3")
    assert summary["dist"]["mean_connections"] >= cfg.num_ues


# -- CLI ---------------------------------------------------------------------------


def test_cli_end_to_end(tmp_path, small_cfg, capsys):
    _, cfg_path = small_cfg
    out = tmp_path / "results"
    assert main(["generate", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    assert main([
        "baseline", "--config", str(cfg_path), "--out-dir", str(out),
        "--strategy", "top", "--m", "2",
    ]) == 0
    captured = capsys.readouterr().out
    assert "top_m2" in captured
    assert main([
        "baseline", "--config", str(cfg_path), "--out-dir", str(out),
        "--strategy", "nope",
    ]) == 2
    assert "unknown strategy" in capsys.readouterr().err


def test_cli_seed_and_tau_override(tmp_path, small_cfg):
    _, cfg_path = small_cfg
    out = tmp_path / "results"
    main(["generate", "--config", str(cfg_path), "--out-dir", str(out), "--seed", "5"])
    meta = json.loads((out / "drops" / "meta.json").read_text())
    assert meta["seed"] == 5
    # tau-p override changes the hash, so the cache must be regenerated for it
    cfg = load_scenario(cfg_path).replace(seed=5)
    assert meta["config_hash"] == config_hash(cfg)
