"""Experiment driver.

Subcommands:
    train        run one variant, write metrics.csv / checkpoint.bin / plots
    eval         evaluate a saved checkpoint and print one metrics row
    resume       continue an interrupted run from its checkpoint
    compare      run several variants over a paired seed list, sign-test them
    certify-gap  certify the environment's constructed cooperation gap
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .baselines import make_trainer
from .checkpoint import (
    CheckpointError,
    checkpoint_from_trainer,
    load_checkpoint,
    restore_trainer,
    save_checkpoint,
)
from .config import ConfigError, ExperimentConfig, load_config
from .env import scripted_optimal_gap
from .train import evaluate, format_metrics_csv, metrics_header


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "no_plots", False):
        cfg.plots = False
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    return Path(f"{Path(args.config).stem}_out")


def write_plots(out_dir: Path, variant: str, rows, act_dim: int) -> None:
    """Figure analogs from metrics.csv data; failure degrades to a warning."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        data = np.array(rows, dtype=np.float64)
        epochs = data[:, 0]
        fig, axes = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
        axes[0].plot(epochs, data[:, 2], label="total")
        axes[0].plot(epochs, data[:, 3], label="main search")
        axes[0].plot(epochs, data[:, 4], label="store search")
        axes[0].set_ylabel("mean eval reward")
        axes[0].legend()
        axes[0].set_title(f"{variant}: reward and critic loss over training")
        axes[1].plot(epochs, data[:, 5], color="tab:red")
        axes[1].set_ylabel("critic loss")
        axes[1].set_xlabel("epoch")
        fig.tight_layout()
        fig.savefig(out_dir / "curves.svg")
        plt.close(fig)

        fig, axes = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
        for agent in range(2):
            base = 7 + agent * act_dim
            for j in range(act_dim):
                axes[agent].plot(epochs, data[:, base + j],
                                 label=f"action_{j}")
            axes[agent].set_ylabel(f"agent {agent} mean action")
            axes[agent].legend(fontsize=7, ncol=3)
        axes[1].set_xlabel("epoch")
        axes[0].set_title(f"{variant}: per-dimension mean actions")
        fig.tight_layout()
        fig.savefig(out_dir / "actions.svg")
        plt.close(fig)
    except Exception as exc:  # CSV remains the source of truth
        print(f"warning: plotting failed ({exc}); metrics.csv is complete",
              file=sys.stderr)


def _write_run_outputs(out_dir: Path, cfg: ExperimentConfig, trainer) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(
        format_metrics_csv(cfg.variant, trainer.metrics, cfg.sim.act_dim))
    save_checkpoint(out_dir / "checkpoint.bin",
                    checkpoint_from_trainer(trainer, cfg.config_hash()))
    if cfg.plots and trainer.metrics:
        write_plots(out_dir, cfg.variant, trainer.metrics, cfg.sim.act_dim)


def cmd_train(args) -> int:
    cfg = _load(args)
    trainer = make_trainer(cfg.variant, cfg.sim, cfg.train)
    trainer.run(until=args.stop_epoch)
    out_dir = _out_dir(args, cfg)
    _write_run_outputs(out_dir, cfg, trainer)
    print(f"{cfg.variant}: trained {trainer.epoch} epochs, "
          f"{trainer.episodes_seen} episodes -> {out_dir}")
    return 0


def cmd_resume(args) -> int:
    cfg = _load(args)
    out_dir = _out_dir(args, cfg)
    ckpt = load_checkpoint(out_dir / "checkpoint.bin")
    trainer = make_trainer(cfg.variant, cfg.sim, cfg.train)
    restore_trainer(trainer, ckpt, cfg.config_hash())
    trainer.run()
    _write_run_outputs(out_dir, cfg, trainer)
    print(f"{cfg.variant}: resumed at epoch {ckpt.epoch}, now at "
          f"{trainer.epoch} -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    out_dir = _out_dir(args, cfg)
    ckpt = load_checkpoint(out_dir / "checkpoint.bin")
    trainer = make_trainer(cfg.variant, cfg.sim, cfg.train)
    restore_trainer(trainer, ckpt, cfg.config_hash())
    comm = getattr(trainer, "comm", None)
    ev = evaluate(trainer.actors, comm, cfg.sim, cfg.train.eval_episodes,
                  trainer._eval_seed)
    print(f"variant={cfg.variant} epoch={trainer.epoch} "
          f"mean_total_reward={ev['mean_total_reward']:.4f} "
          f"reward_main={ev['reward_main']:.4f} "
          f"reward_store={ev['reward_store']:.4f}")
    return 0


def _sign_test(wins: int, losses: int) -> float:
    """One-sided sign test p-value (ties already dropped)."""
    from scipy.stats import binomtest
    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def run_comparison(configs, out_dir: Path) -> dict:
    """Run every variant over the shared seed list; returns the summary."""
    seed_lists = {tuple(c.seeds) for c in configs}
    if len(seed_lists) != 1 or not configs[0].seeds:
        raise ConfigError(
            "compare: every config must declare the same nonempty 'seeds' "
            "list (paired comparison)")
    seeds = configs[0].seeds
    variants = [c.variant for c in configs]
    if len(set(variants)) != len(variants):
        raise ConfigError("compare: duplicate variants in config list")

    results = {}  # variant -> seed -> dict
    for cfg in configs:
        per_seed = {}
        for seed in seeds:
            run_cfg = cfg.with_seed(seed)
            trainer = make_trainer(run_cfg.variant, run_cfg.sim, run_cfg.train)
            trainer.run()
            first, last = trainer.metrics[0], trainer.metrics[-1]
            per_seed[seed] = {
                "final_total": last[2], "final_main": last[3],
                "final_store": last[4], "initial_total": first[2],
            }
        results[cfg.variant] = per_seed

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["variant,seed,final_total,final_main,final_store,initial_total"]
    for variant in variants:
        for seed in seeds:
            r = results[variant][seed]
            lines.append(f"{variant},{seed},{r['final_total']!r},"
                         f"{r['final_main']!r},{r['final_store']!r},"
                         f"{r['initial_total']!r}")
    (out_dir / "comparison.csv").write_text("\n".join(lines) + "\n")

    summary = {"seeds": list(seeds), "means": {}}
    text = []
    for variant in variants:
        vals = [results[variant][s]["final_total"] for s in seeds]
        summary["means"][variant] = float(np.mean(vals))
        text.append(f"{variant}: mean final total reward "
                    f"{summary['means'][variant]:.4f} over {len(seeds)} seeds")

    if "ma_rdpg" in results and "independent" in results:
        wins = sum(results["ma_rdpg"][s]["final_total"]
                   > results["independent"][s]["final_total"] for s in seeds)
        losses = sum(results["ma_rdpg"][s]["final_total"]
                     < results["independent"][s]["final_total"] for s in seeds)
        p = _sign_test(wins, losses)
        summary["total_reward_sign_test"] = {"wins": wins, "losses": losses,
                                             "p_value": p}
        text.append(f"sign test (ma_rdpg total > independent total): "
                    f"{wins}/{wins + losses} wins, p = {p:.4g}")
        store_beats_main = sum(
            (results["ma_rdpg"][s]["final_store"]
             - results["independent"][s]["final_store"])
            > (results["ma_rdpg"][s]["final_main"]
               - results["independent"][s]["final_main"]) for s in seeds)
        summary["store_improves_more"] = int(store_beats_main)
        text.append(f"store-scenario reward improves more than main in "
                    f"{store_beats_main}/{len(seeds)} seeds")
    if "ma_rdpg" in results and "main_only_ew" in results:
        wins = sum(results["ma_rdpg"][s]["final_store"]
                   > results["main_only_ew"][s]["final_store"] for s in seeds)
        losses = sum(results["ma_rdpg"][s]["final_store"]
                     < results["main_only_ew"][s]["final_store"] for s in seeds)
        p = _sign_test(wins, losses)
        summary["store_reward_sign_test"] = {"wins": wins, "losses": losses,
                                             "p_value": p}
        text.append(f"sign test (ma_rdpg store > main_only_ew store): "
                    f"{wins}/{wins + losses} wins, p = {p:.4g}")

    (out_dir / "summary.txt").write_text("\n".join(text) + "\n")
    summary["text"] = text
    return summary


def cmd_compare(args) -> int:
    configs = [load_config(p) for p in args.config]
    if len(configs) < 2:
        raise ConfigError("compare needs at least two --config arguments")
    out_dir = Path(args.out) if args.out else Path("comparison_out")
    summary = run_comparison(configs, out_dir)
    for line in summary["text"]:
        print(line)
    print(f"wrote {out_dir / 'comparison.csv'}")
    return 0


def cmd_certify_gap(args) -> int:
    cfg = _load(args)
    result = scripted_optimal_gap(cfg.sim)
    print(f"coop_value        = {result.coop_value:.4f} "
          f"(se {result.coop_se:.4f})")
    print(f"independent_value = {result.independent_value:.4f} "
          f"(se {result.independent_se:.4f})")
    print(f"gap               = {result.gap:.4f} "
          f"({result.gap / max(result.gap_se, 1e-12):.1f} standard errors, "
          f"{result.n_eval} episodes per estimate)")
    if result.certified:
        print("cooperation gap CERTIFIED (> 3 standard errors)")
        return 0
    print("no certified cooperation gap")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mardpg",
        description="Cooperative two-scenario ranking experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, multi_config=False):
        if multi_config:
            p.add_argument("--config", action="append", required=True,
                           help="experiment config file (repeatable)")
        else:
            p.add_argument("--config", required=True,
                           help="experiment config file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--no-plots", action="store_true",
                       help="skip SVG plot generation")

    p = sub.add_parser("train", help="train one variant")
    add_common(p)
    p.add_argument("--stop-epoch", type=int, default=None,
                   help="checkpoint after this many epochs (resume later)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("resume", help="continue from a checkpoint")
    add_common(p)
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("compare", help="paired-seed variant comparison")
    add_common(p, multi_config=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("certify-gap",
                       help="certify the environment cooperation gap")
    add_common(p)
    p.set_defaults(func=cmd_certify_gap)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
