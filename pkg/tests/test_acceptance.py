"""Acceptance gate.

One test (or small group) per acceptance criterion:

1. gradient exactness against central finite differences
2. training-loop mechanics (targets, zero-lr identity, loss descent)
3. certified cooperation gap in the simulator (and its kappa=0 ablation)
4. joint training beats independent learners over paired seeds
5. joint training beats the fixed equal-weight store baseline on store reward
6. training-curve stabilization analogs (critic loss, action drift) + plots
7. determinism and checkpoint persistence

Criteria 3-6 are desk-scale experiments; the full module takes roughly half
an hour on one core, dominated by the 30-run paired comparison.
"""
import csv
import time
from pathlib import Path

import numpy as np
import pytest

from mardpg.baselines import make_trainer
from mardpg.checkpoint import (
    IntegrityError,
    checkpoint_from_trainer,
    load_checkpoint,
    restore_trainer,
    save_checkpoint,
)
from mardpg.cli import run_comparison, write_plots
from mardpg.config import load_config, parse_config_text
from mardpg.env import SimConfig
from mardpg.model import (
    Actor,
    CommModule,
    Critic,
    TargetSet,
    actor_grad,
    bellman_target,
    critic_loss_and_grad,
    episode_comm_grad,
    episode_comm_objective,
)
from mardpg.numerics import (
    Adam,
    assign_flat,
    finite_diff_grad,
    flatten_params,
    grad_matches,
)
from mardpg.train import MaTrainer, TrainConfig, format_metrics_csv

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

# small shapes keep every finite-difference check well under 500 parameters
MSG, OBS, ACT, HID, NA = 3, 4, 2, 5, 2
N_INSTANTIATIONS = 20


def _fd_against(net_params, analytic, objective):
    """Compare an analytic gradient dict against central differences of
    `objective` (a closure over the live network parameters)."""
    flat0 = flatten_params(net_params).copy()

    def f(flat):
        assign_flat(net_params, flat)
        return objective()

    numeric = finite_diff_grad(f, flat0)
    assign_flat(net_params, flat0)
    return grad_matches(flatten_params(analytic), numeric)


def _random_nets(seed):
    rng = np.random.default_rng(seed)
    actors = [Actor(i, MSG, OBS, ACT, HID, rng) for i in range(NA)]
    critic = Critic(MSG, OBS, ACT, NA, HID, rng)
    comm = CommModule(MSG, OBS, ACT, rng)
    return rng, actors, critic, comm


def _random_batch(rng, n):
    return [(rng.normal(size=MSG), rng.normal(size=OBS),
             rng.uniform(-1, 1, size=ACT), int(rng.integers(NA)),
             float(rng.normal())) for _ in range(n)]


# ---------------------------------------------------------------------------
# criterion 1: gradient exactness


def test_criterion1_critic_gradients_match_finite_differences():
    for seed in range(N_INSTANTIATIONS):
        rng, _, critic, _ = _random_nets(seed)
        batch = _random_batch(rng, 4)
        assert sum(v.size for v in critic.params().values()) <= 500
        _, grads = critic_loss_and_grad(critic, batch)
        assert _fd_against(
            critic.params(), grads,
            lambda: critic_loss_and_grad(critic, batch)[0]), seed


def test_criterion1_actor_gradients_match_finite_differences():
    for seed in range(N_INSTANTIATIONS):
        rng, actors, critic, _ = _random_nets(seed)
        actor = actors[0]
        batch = [(rng.normal(size=MSG), rng.normal(size=OBS), 0)
                 for _ in range(4)]
        assert sum(v.size for v in actor.params().values()) <= 500
        grads, _ = actor_grad(actor, critic, batch)
        assert _fd_against(
            actor.params(), grads,
            lambda: actor_grad(actor, critic, batch)[1]), seed


@pytest.mark.parametrize("T", [1, 3, 5])
def test_criterion1_communication_bptt_matches_finite_differences(T):
    for seed in range(N_INSTANTIATIONS):
        rng, actors, critic, comm = _random_nets(seed)
        obs = [rng.normal(size=OBS) for _ in range(T)]
        act = [rng.uniform(-1, 1, size=ACT) for _ in range(T)]
        agents = [int(rng.integers(NA)) for _ in range(T)]
        ys = [float(rng.normal()) for _ in range(T)]
        assert sum(v.size for v in comm.params().values()) <= 500
        grads = episode_comm_grad(comm, critic, actors, obs, act, agents, ys)
        assert _fd_against(
            comm.params(), grads,
            lambda: episode_comm_objective(comm, critic, actors, obs, act,
                                           agents, ys)), seed


# ---------------------------------------------------------------------------
# criterion 2: training-loop mechanics

SMALL_TRAIN = dict(msg_dim=4, actor_hidden=8, critic_hidden=8,
                   episodes_per_epoch=4, minibatch_size=2,
                   updates_per_epoch=2, epochs=2, eval_interval=1,
                   eval_episodes=3)
SMALL_SIM = dict(n_stores=4, n_products=5, horizon=6, top_k=2, obs_dim=12)


def test_criterion2_terminal_targets_equal_rewards():
    rng, actors, critic, _ = _random_nets(7)
    ts = TargetSet(actors, critic, tau=0.1)
    for r in rng.normal(size=20):
        y = bellman_target(float(r), True, 0.9, ts, rng.normal(size=MSG),
                           rng.normal(size=OBS), 0)
        assert y == float(r)


def test_criterion2_zero_gamma_targets_equal_rewards():
    rng, actors, critic, _ = _random_nets(8)
    ts = TargetSet(actors, critic, tau=0.1)
    for r in rng.normal(size=20):
        y = bellman_target(float(r), False, 0.0, ts, rng.normal(size=MSG),
                           rng.normal(size=OBS), 1)
        assert y == float(r)


def test_criterion2_zero_learning_rates_leave_parameters_bit_identical():
    tr = MaTrainer(SimConfig(**SMALL_SIM),
                   TrainConfig(**SMALL_TRAIN, lr_actor=0.0, lr_actor_final=0.0,
                               lr_critic=0.0, lr_comm=0.0, lr_comm_final=0.0))
    # online networks only: the soft-updated target copies blend two equal
    # values, which is not a bitwise no-op in floating point
    nets = {name: net for name, net in tr.named_networks().items()
            if not name.startswith("target")}
    before = {name: flatten_params(net.params()).copy()
              for name, net in nets.items()}
    tr.run()
    for name, net in nets.items():
        assert np.array_equal(before[name], flatten_params(net.params())), name


def test_criterion2_small_lr_step_reduces_minibatch_critic_loss():
    rng, _, critic, _ = _random_nets(9)
    batch = _random_batch(rng, 8)
    loss0, grads = critic_loss_and_grad(critic, batch)
    Adam(critic.params(), lr=1e-3).step(grads)
    loss1, _ = critic_loss_and_grad(critic, batch)
    assert loss1 < loss0


# ---------------------------------------------------------------------------
# criterion 3: certified cooperation gap


def test_criterion3_cooperation_gap_certified_and_vanishes_at_kappa0():
    from mardpg.env import scripted_optimal_gap
    cfg = load_config(CONFIG_DIR / "certify_gap.cfg")
    res = scripted_optimal_gap(cfg.sim)
    assert res.n_eval >= 10_000
    assert res.certified
    assert res.gap > 3.0 * res.gap_se

    cfg0 = load_config(CONFIG_DIR / "certify_gap_kappa0.cfg")
    res0 = scripted_optimal_gap(cfg0.sim)
    assert not res0.certified


# ---------------------------------------------------------------------------
# criteria 4 and 5: paired-seed comparison on the default config


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    out = tmp_path_factory.mktemp("comparison")
    configs = [load_config(CONFIG_DIR / f"{v}.cfg")
               for v in ("ma_rdpg", "independent", "main_only_ew")]
    t0 = time.monotonic()
    summary = run_comparison(configs, out)
    elapsed = time.monotonic() - t0
    rows = {}
    with open(out / "comparison.csv") as f:
        for rec in csv.DictReader(f):
            rows[(rec["variant"], int(rec["seed"]))] = {
                k: float(rec[k]) for k in ("final_total", "final_main",
                                           "final_store", "initial_total")}
    return summary, rows, elapsed


def test_criterion4_joint_beats_independent(comparison):
    summary, rows, elapsed = comparison
    seeds = summary["seeds"]
    assert len(seeds) >= 10
    assert elapsed <= 30 * 60

    st = summary["total_reward_sign_test"]
    assert st["wins"] > st["losses"]
    assert st["p_value"] < 0.05
    assert summary["means"]["ma_rdpg"] > summary["means"]["independent"]

    # >= 30% over the untrained initial policy
    finals = np.array([rows[("ma_rdpg", s)]["final_total"] for s in seeds])
    initials = np.array([rows[("ma_rdpg", s)]["initial_total"] for s in seeds])
    assert finals.mean() >= 1.3 * initials.mean()

    # the store scenario gains more than the main scenario in most seeds
    assert summary["store_improves_more"] > len(seeds) // 2


def test_criterion5_ew_store_baseline_hurts_store_reward(comparison):
    summary, rows, _ = comparison
    st = summary["store_reward_sign_test"]
    assert st["wins"] > st["losses"]
    assert st["p_value"] < 0.05
    seeds = summary["seeds"]
    ma = np.mean([rows[("ma_rdpg", s)]["final_store"] for s in seeds])
    ew = np.mean([rows[("main_only_ew", s)]["final_store"] for s in seeds])
    assert ew < ma


# ---------------------------------------------------------------------------
# criterion 6: training-curve stabilization analogs


@pytest.fixture(scope="module")
def default_run():
    cfg = load_config(CONFIG_DIR / "ma_rdpg.cfg")
    trainer = MaTrainer(cfg.sim, cfg.train)
    trainer.run()
    return cfg, trainer


def _smooth(x, window=3):
    kernel = np.ones(window) / window
    return np.convolve(x, kernel, mode="valid")


def test_criterion6_critic_loss_halves_and_actions_stabilize(default_run):
    _, trainer = default_run
    rows = np.array(trainer.metrics, dtype=np.float64)

    loss = _smooth(rows[1:, 5])  # row 0 is pre-training (no loss yet)
    q = len(loss) // 4
    assert np.mean(loss[-q:]) < 0.5 * np.mean(loss[:q])

    acts = rows[:, 7:]  # per-dimension mean actions, both agents
    qq = len(rows) // 4
    std_first = np.mean(np.std(acts[:qq], axis=0))
    std_last = np.mean(np.std(acts[-qq:], axis=0))
    assert std_last < 0.25 * std_first


def test_criterion6_figure_analogs_emitted(default_run, tmp_path):
    cfg, trainer = default_run
    write_plots(tmp_path, "ma_rdpg", trainer.metrics, cfg.sim.act_dim)
    for name in ("curves.svg", "actions.svg"):
        path = tmp_path / name
        assert path.exists() and path.stat().st_size > 0, name


# ---------------------------------------------------------------------------
# criterion 7: determinism and persistence

SMALL_CFG_TEXT = """
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


def _small_cfg():
    return parse_config_text(SMALL_CFG_TEXT)


def test_criterion7_identical_config_and_seed_give_identical_csv():
    csvs = []
    for _ in range(2):
        cfg = _small_cfg()
        tr = make_trainer(cfg.variant, cfg.sim, cfg.train)
        tr.run()
        csvs.append(format_metrics_csv(cfg.variant, tr.metrics,
                                       cfg.sim.act_dim))
    assert csvs[0] == csvs[1]


def test_criterion7_resume_reproduces_uninterrupted_metrics(tmp_path):
    cfg = _small_cfg()
    full = make_trainer(cfg.variant, cfg.sim, cfg.train)
    full.run()
    want = format_metrics_csv(cfg.variant, full.metrics, cfg.sim.act_dim)

    half = make_trainer(cfg.variant, cfg.sim, cfg.train)
    half.run(until=2)
    path = tmp_path / "c.bin"
    save_checkpoint(path, checkpoint_from_trainer(half, cfg.config_hash()))
    resumed = make_trainer(cfg.variant, cfg.sim, cfg.train)
    restore_trainer(resumed, load_checkpoint(path), cfg.config_hash())
    resumed.run()
    got = format_metrics_csv(cfg.variant, resumed.metrics, cfg.sim.act_dim)
    assert got == want


def test_criterion7_corrupted_checkpoint_rejected(tmp_path):
    cfg = _small_cfg()
    tr = make_trainer(cfg.variant, cfg.sim, cfg.train)
    tr.run(until=1)
    path = tmp_path / "c.bin"
    save_checkpoint(path, checkpoint_from_trainer(tr, cfg.config_hash()))
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 3] ^= 0x10
    path.write_bytes(bytes(blob))
    with pytest.raises(IntegrityError):
        load_checkpoint(path)
