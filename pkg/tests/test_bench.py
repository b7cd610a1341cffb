"""Harness tests: config parsing, determinism, CLI surfaces."""

import json
import subprocess
import sys

import pytest

from navprune.bench import (
    DEFAULT_FRACTIONS,
    SweepConfig,
    load_config,
    make_plan,
    parse_config,
    rows_to_csv,
    run_cell,
    run_sweep,
    write_outputs,
)
from navprune.cli import main as cli_main
from navprune.vocabulary import Vocabulary, load_vocabulary


TINY = dict(
    episodes="6",
    strategies="none,bgp",
    retain_fractions="1.0,0.6",
    nodes="20",
    path_len="4",
    hidden_dim="8",
    n_views="6",
    sigma_feat="0.0",
    filler_rate="0.5",
    seed_block="77",
)


def _config_text(**overrides):
    values = dict(TINY)
    values.update({k: str(v) for k, v in overrides.items()})
    return "\n".join(f"{k}={v}" for k, v in values.items()) + "\n"


def test_default_fractions_are_fifteen_budgets():
    assert len(DEFAULT_FRACTIONS) == 15
    assert DEFAULT_FRACTIONS[0] == 1.0
    assert DEFAULT_FRACTIONS[-1] == 0.3


def test_parse_config_types_and_unknown_keys():
    cfg = parse_config(_config_text())
    assert cfg.episodes == 6
    assert cfg.strategies == ("none", "bgp")
    assert cfg.retain_fractions == (1.0, 0.6)
    assert cfg.sigma_feat == 0.0
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config("bogus_key=1\n")


def test_make_plan_strategy_grammar():
    plan = make_plan("nap", 0.5, 6, Vocabulary(frozenset({"the"})))
    assert plan.instruction.kind == "vpp"
    assert plan.views.kind == "bgp"
    assert plan.k_btp == 6
    plan = make_plan("cascade+tome", 0.5, 6, None)
    assert plan.instruction.kind == "cascade"
    assert plan.views.kind == "tome"
    plan = make_plan("fullview", 0.8, 6, None)
    assert plan.views.kind == "fastv" and not plan.views.protect_action_views
    with pytest.raises(ValueError, match="unknown strategy atom"):
        make_plan("warp", 1.0, 6, None)
    with pytest.raises(ValueError, match="missing vocabulary"):
        make_plan("vpp", 0.5, 6, None)


def test_reference_cell_is_exactly_100_percent():
    cfg = parse_config(_config_text(strategies="none", retain_fractions="1.0"))
    cell = run_cell(cfg, "none", 1.0)
    assert cell.mean_flops_percent == 100.0


def test_sweep_rerun_is_byte_identical(tmp_path):
    cfg = parse_config(_config_text())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    write_outputs(cfg, run_sweep(cfg), out1)
    write_outputs(cfg, run_sweep(cfg), out2)
    assert (out1 / "sweep.csv").read_bytes() == (out2 / "sweep.csv").read_bytes()
    assert (out1 / "sweep.json").read_bytes() == (out2 / "sweep.json").read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = parse_config(_config_text())
    serial = rows_to_csv(run_sweep(cfg, jobs=1))
    parallel = rows_to_csv(run_sweep(cfg, jobs=2))
    assert serial == parallel


def test_sweep_rows_sorted_and_schema_header():
    cfg = parse_config(_config_text())
    csv_text = rows_to_csv(run_sweep(cfg))
    lines = csv_text.splitlines()
    assert lines[0].startswith("# navprune-sweep-csv v1")
    assert any("flops_per_mac=2" in line for line in lines[:3])
    header = "strategy,retain_fraction,success_rate,ci95,mean_steps,mean_flops_percent,episodes,seed_block"
    assert header in lines
    data = [line for line in lines if line and not line.startswith("#") and line != header]
    keys = [(row.split(",")[0], -float(row.split(",")[1])) for row in data]
    assert keys == sorted(keys)


def test_sweep_requires_vocab_for_vpp():
    cfg = parse_config(_config_text(strategies="vpp"))
    with pytest.raises(ValueError, match="missing vocabulary"):
        run_sweep(cfg)


def test_sweep_json_carries_config(tmp_path):
    cfg = parse_config(_config_text())
    _, json_path = write_outputs(cfg, run_sweep(cfg), tmp_path)
    payload = json.loads(json_path.read_text())
    assert payload["config"]["episodes"] == 6
    assert payload["rows"][0]["strategy"] == "bgp"


# ---- command line ----


def test_cli_build_vocab_offline_and_frozen_cache(tmp_path, capsys):
    corpus = tmp_path / "corpus.txt"
    corpus.write_text("walk down one flight of stairs and stop on the landing .\n")
    out1, out2 = tmp_path / "v1.vocab", tmp_path / "v2.vocab"
    cache = tmp_path / "cache.tsv"
    assert cli_main(["build-vocab", "--corpus", str(corpus), "--out", str(out1),
                     "--offline", "--cache", str(cache)]) == 0
    assert cli_main(["build-vocab", "--corpus", str(corpus), "--out", str(out2),
                     "--offline", "--cache", str(cache)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    vocab = load_vocabulary(out1)
    assert {"of", "and", "the"} <= set(vocab.words)
    assert vocab.builder == "fallback"


def test_cli_gen_world_deterministic(tmp_path, capsys):
    w1, w2 = tmp_path / "w1.world", tmp_path / "w2.world"
    args = ["gen-world", "--seed", "5", "--nodes", "15", "--path-len", "4",
            "--hidden-dim", "8", "--views", "6"]
    assert cli_main(args + ["--out", str(w1)]) == 0
    assert cli_main(args + ["--out", str(w2)]) == 0
    assert w1.read_bytes() == w2.read_bytes()


def test_cli_run_episode_full_retention(tmp_path, capsys):
    world = tmp_path / "w.world"
    cli_main(["gen-world", "--seed", "5", "--nodes", "15", "--path-len", "4",
              "--hidden-dim", "8", "--views", "6", "--out", str(world)])
    capsys.readouterr()
    assert cli_main(["run-episode", "--world", str(world), "--strategy", "none",
                     "--retain", "1.0"]) == 0
    printed = capsys.readouterr().out
    assert "success=True" in printed
    assert "views_total=0" in printed
    assert "g_total=" in printed


def test_cli_flops_reports_published_numbers(capsys):
    assert cli_main(["flops", "--l", "36", "--d", "768", "--l-act", "4"]) == 0
    printed = capsys.readouterr().out
    assert "3981312" in printed
    assert "442368" in printed
    assert "flops_per_mac=2" in printed


def test_cli_sweep_writes_outputs(tmp_path, capsys):
    config = tmp_path / "sweep.cfg"
    config.write_text(_config_text(episodes="3"))
    out = tmp_path / "out"
    assert cli_main(["sweep", "--config", str(config), "--out", str(out)]) == 0
    assert (out / "sweep.csv").exists()
    assert (out / "sweep.json").exists()


def test_cli_entrypoint_runs_as_module():
    proc = subprocess.run(
        [sys.executable, "-m", "navprune.cli", "flops", "--l", "4", "--d", "8"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "attention_flops" in proc.stdout
