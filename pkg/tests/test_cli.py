"""CLI end-to-end: every subcommand through `main`, exit codes included."""
import numpy as np
import pytest

from mardpg.cli import main

SMALL = """
variant = ma_rdpg
sim.n_stores = 4
sim.n_products = 5
sim.horizon = 6
sim.top_k = 2
sim.obs_dim = 12
train.msg_dim = 4
train.actor_hidden = 8
train.critic_hidden = 8
train.episodes_per_epoch = 4
train.minibatch_size = 2
train.updates_per_epoch = 2
train.epochs = 4
train.eval_interval = 1
train.eval_episodes = 3
seed = 3
"""

CERTIFY = """
variant = ma_rdpg
sim.n_stores = 3
sim.n_products = 4
sim.horizon = 4
sim.top_k = 2
sim.act_dim = 3
sim.obs_dim = 12
seed = 0
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def test_train_writes_outputs(cfg_path, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    for name in ("metrics.csv", "checkpoint.bin", "curves.svg", "actions.svg"):
        assert (out / name).exists(), name
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header.startswith("variant,epoch,episodes_seen,mean_total_reward")


def test_no_plots_flag_skips_svgs(cfg_path, tmp_path):
    out = tmp_path / "run"
    rc = main(["train", "--config", str(cfg_path), "--out", str(out),
               "--no-plots"])
    assert rc == 0
    assert (out / "metrics.csv").exists()
    assert not (out / "curves.svg").exists()


def test_seed_override_changes_metrics(cfg_path, tmp_path):
    outs = []
    for seed in (3, 4):
        out = tmp_path / f"run{seed}"
        main(["train", "--config", str(cfg_path), "--out", str(out),
              "--seed", str(seed), "--no-plots"])
        outs.append((out / "metrics.csv").read_text())
    assert outs[0] != outs[1]


def test_determinism_byte_identical_csv(cfg_path, tmp_path):
    texts = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        main(["train", "--config", str(cfg_path), "--out", str(out),
              "--no-plots"])
        texts.append((out / "metrics.csv").read_bytes())
    assert texts[0] == texts[1]


def test_eval_prints_reward(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--out", str(out), "--no-plots"])
    rc = main(["eval", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert "mean_total_reward=" in line and "variant=ma_rdpg" in line


def test_stop_epoch_then_resume_matches_straight_run(cfg_path, tmp_path):
    straight = tmp_path / "straight"
    main(["train", "--config", str(cfg_path), "--out", str(straight),
          "--no-plots"])

    out = tmp_path / "resumed"
    main(["train", "--config", str(cfg_path), "--out", str(out),
          "--no-plots", "--stop-epoch", "2"])
    rc = main(["resume", "--config", str(cfg_path), "--out", str(out),
               "--no-plots"])
    assert rc == 0
    assert ((out / "metrics.csv").read_bytes()
            == (straight / "metrics.csv").read_bytes())


def test_resume_rejects_corrupted_checkpoint(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--out", str(out), "--no-plots",
          "--stop-epoch", "2"])
    path = out / "checkpoint.bin"
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0x01
    path.write_bytes(bytes(blob))
    rc = main(["resume", "--config", str(cfg_path), "--out", str(out)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_resume_rejects_config_mismatch(cfg_path, tmp_path, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(cfg_path), "--out", str(out), "--no-plots",
          "--stop-epoch", "2"])
    other = tmp_path / "other.cfg"
    other.write_text(SMALL.replace("sim.horizon = 6", "sim.horizon = 5"))
    rc = main(["resume", "--config", str(other), "--out", str(out)])
    assert rc == 2


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.learning_rate = 0.1\n")
    rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_compare_runs_paired_variants(tmp_path, capsys):
    paths = []
    for variant in ("ma_rdpg", "independent"):
        p = tmp_path / f"{variant}.cfg"
        p.write_text(SMALL.replace("variant = ma_rdpg",
                                   f"variant = {variant}")
                     + "seeds = 3,4,5\n")
        paths.append(str(p))
    out = tmp_path / "cmp"
    rc = main(["compare", "--config", paths[0], "--config", paths[1],
               "--out", str(out)])
    assert rc == 0
    lines = (out / "comparison.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 3  # header + variants x seeds
    assert "sign test" in (out / "summary.txt").read_text()
    assert "p =" in capsys.readouterr().out


def test_compare_rejects_mismatched_seed_lists(tmp_path):
    a = tmp_path / "a.cfg"
    a.write_text(SMALL + "seeds = 1,2\n")
    b = tmp_path / "b.cfg"
    b.write_text(SMALL.replace("variant = ma_rdpg", "variant = independent")
                 + "seeds = 1,3\n")
    rc = main(["compare", "--config", str(a), "--config", str(b),
               "--out", str(tmp_path / "cmp")])
    assert rc == 2


def test_certify_gap_exit_codes(tmp_path, capsys):
    on = tmp_path / "on.cfg"
    on.write_text(CERTIFY)
    off = tmp_path / "off.cfg"
    off.write_text(CERTIFY + "sim.kappa = 0.0\n")
    assert main(["certify-gap", "--config", str(on)]) == 0
    assert "CERTIFIED" in capsys.readouterr().out
    assert main(["certify-gap", "--config", str(off)]) == 1
    assert "no certified" in capsys.readouterr().out
