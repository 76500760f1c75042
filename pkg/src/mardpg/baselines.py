"""Comparison baselines.

IndependentTrainer: two disjoint actor-critic pairs, one per scenario, with
the message input pinned to zero and each pair trained only on its own
scenario's per-step reward (no communication, no shared critic). Transitions
for a scenario link that agent's consecutive activations within a session.

train_main_only_with_ew_store: the shared-machinery variant where the store
actor is a constant equal-weight policy and only the main actor learns (on
total reward); implemented by MaTrainer with variant="main_only_ew".
"""
from __future__ import annotations

import numpy as np

from .env import N_AGENTS, ConfigError, MarketplaceEnv, SimConfig
from .model import Actor, Critic, FixedActor, TargetSet, actor_grad, \
    critic_loss_and_grad
from .numerics import Adam, clip_grad_norm, scale_params
from .train import (
    InsufficientDataError,
    MaTrainer,
    ReplayBuffer,
    TrainConfig,
    evaluate,
    metrics_header,
)

# the L2R+EW analog's fixed store policy
EqualWeightPolicy = FixedActor


class IndependentTrainer:
    """Two isolated DDPG-style learners, one per scenario."""

    variant = "independent"

    def __init__(self, sim: SimConfig, cfg: TrainConfig):
        sim.validate()
        cfg.validate()
        self.sim = sim
        self.cfg = cfg
        self.env = MarketplaceEnv(sim)
        self.rng = np.random.default_rng(cfg.seed)

        msg, obs, act = cfg.msg_dim, sim.obs_dim, sim.act_dim
        self.zero_msg = np.zeros(msg)
        self.actors = [Actor(i, msg, obs, act, cfg.actor_hidden, self.rng)
                       for i in range(N_AGENTS)]
        self.critics = [Critic(msg, obs, act, N_AGENTS, cfg.critic_hidden,
                               self.rng) for _ in range(N_AGENTS)]
        self.targets = [TargetSet([self.actors[i]], self.critics[i],
                                  cfg.target_tau) for i in range(N_AGENTS)]
        self.adam_actors = [Adam(a.params(), lr=cfg.lr_actor)
                            for a in self.actors]
        self.adam_critics = [Adam(c.params(), lr=cfg.lr_critic)
                             for c in self.critics]
        self.buffers = [ReplayBuffer(cfg.buffer_capacity)
                        for _ in range(N_AGENTS)]
        self.epoch = 0
        self.episodes_seen = 0
        self.metrics: list = []
        self._last_critic_loss = float("nan")
        self._last_mean_q = float("nan")
        self._eval_seed = cfg.seed * 1_000_003 + 998_244_353

    # -- collection -----------------------------------------------------

    def collect_episode(self, noise_std: float) -> None:
        """Roll one session and split it into per-agent transition chains."""
        ep_seed = int(self.rng.integers(2 ** 63 - 1))
        self.env.reset(ep_seed)
        pending = [None, None]
        seqs = [[], []]
        while not self.env.done:
            o = self.env.current_obs
            i = self.env.active_agent
            if pending[i] is not None:
                po, pa, pr = pending[i]
                seqs[i].append((po, pa, pr, o, False))
                pending[i] = None
            a = self.actors[i].forward(self.zero_msg, o)
            if noise_std > 0.0:
                a = np.clip(a + self.rng.normal(0.0, noise_std, size=a.shape),
                            -1.0, 1.0)
            res = self.env.step(a)
            pending[i] = (o, a, res.reward)
        for i in range(N_AGENTS):
            if pending[i] is not None:
                po, pa, pr = pending[i]
                seqs[i].append((po, pa, pr, np.zeros(self.sim.obs_dim), True))
            if seqs[i]:
                self.buffers[i].push(seqs[i])
        self.episodes_seen += 1

    # -- updates ---------------------------------------------------------

    def _update_agent(self, i: int) -> tuple:
        cfg = self.cfg
        batch = self.buffers[i].sample(cfg.minibatch_size, self.rng)
        critic_items = []
        actor_items = []
        ts = self.targets[i]
        for seq in batch:
            for o, a, r, o_next, done in seq:
                if done:
                    y = float(r)
                else:
                    a_next = ts.actors[0].forward(self.zero_msg, o_next)
                    y = float(r) + cfg.gamma * ts.critic.forward(
                        self.zero_msg, o_next, a_next, i)
                critic_items.append((self.zero_msg, o, a, i, y))
                actor_items.append((self.zero_msg, o, i))
        loss, grads_c = critic_loss_and_grad(self.critics[i], critic_items)
        self.adam_critics[i].step(clip_grad_norm(grads_c, cfg.grad_clip))
        grads_a, mean_q = actor_grad(self.actors[i], self.critics[i],
                                     actor_items)
        self.adam_actors[i].step(
            clip_grad_norm(scale_params(grads_a, -1.0), cfg.grad_clip))
        ts.soft_update([self.actors[i]], self.critics[i])
        return loss, mean_q

    def train_epoch(self) -> None:
        cfg = self.cfg
        std = cfg.noise_for_epoch(self.epoch)
        lr_a = cfg.lr_actor_for_epoch(self.epoch)
        for adam in self.adam_actors:
            adam.lr = lr_a
        for _ in range(cfg.episodes_per_epoch):
            self.collect_episode(std)
        losses = []
        qs = []
        for _ in range(cfg.updates_per_epoch):
            for i in range(N_AGENTS):
                try:
                    loss, mean_q = self._update_agent(i)
                except InsufficientDataError:
                    continue
                losses.append(loss)
                qs.append(mean_q)
        self._last_critic_loss = float(np.mean(losses)) if losses else float("nan")
        self._last_mean_q = float(np.mean(qs)) if qs else float("nan")
        self.epoch += 1

    def record_eval(self) -> None:
        ev = evaluate(self.actors, None, self.sim, self.cfg.eval_episodes,
                      self._eval_seed)
        row = [float(self.epoch), float(self.episodes_seen),
               ev["mean_total_reward"], ev["reward_main"], ev["reward_store"],
               self._last_critic_loss, self._last_mean_q]
        row += list(ev["mean_actions"].ravel())
        self.metrics.append(row)

    def run(self, until: int | None = None) -> None:
        cfg = self.cfg
        stop = cfg.epochs if until is None else min(until, cfg.epochs)
        if stop == 0:
            return
        if self.epoch == 0 and not self.metrics:
            self.record_eval()
        while self.epoch < stop:
            self.train_epoch()
            if self.epoch % cfg.eval_interval == 0 or self.epoch == cfg.epochs:
                self.record_eval()

    # -- persistence ------------------------------------------------------

    def named_networks(self) -> dict:
        nets = {}
        for i in range(N_AGENTS):
            nets[f"actor{i}"] = self.actors[i]
            nets[f"critic{i}"] = self.critics[i]
            nets[f"target_actor{i}"] = self.targets[i].actors[0]
            nets[f"target_critic{i}"] = self.targets[i].critic
        return nets

    def _named_adams(self) -> dict:
        out = {}
        for i in range(N_AGENTS):
            out[f"actor{i}"] = self.adam_actors[i]
            out[f"critic{i}"] = self.adam_critics[i]
        return out

    def to_arrays(self) -> dict:
        arrays = {}
        for net_name, net in self.named_networks().items():
            for k, v in net.params().items():
                arrays[f"{net_name}/{k}"] = v.copy()
        for name, adam in self._named_adams().items():
            arrays[f"adam/{name}/t"] = np.array([adam.t], dtype=np.int64)
            for k in adam.m:
                arrays[f"adam/{name}/m/{k}"] = adam.m[k].copy()
                arrays[f"adam/{name}/v/{k}"] = adam.v[k].copy()
        for i in range(N_AGENTS):
            for j, seq in enumerate(self.buffers[i].items()):
                pre = f"buffer{i}/{j:05d}"
                arrays[f"{pre}/obs"] = np.vstack([tr[0] for tr in seq])
                arrays[f"{pre}/act"] = np.vstack([tr[1] for tr in seq])
                arrays[f"{pre}/r"] = np.array([tr[2] for tr in seq])
                arrays[f"{pre}/obs_next"] = np.vstack([tr[3] for tr in seq])
                arrays[f"{pre}/done"] = np.array(
                    [int(tr[4]) for tr in seq], dtype=np.int64)
        n_cols = len(metrics_header(self.sim.act_dim)) - 1
        arrays["metrics"] = (np.array(self.metrics, dtype=np.float64)
                             if self.metrics else np.zeros((0, n_cols)))
        return arrays

    def load_arrays(self, arrays: dict, epoch: int, episodes_seen: int,
                    rng_state: dict) -> None:
        for net_name, net in self.named_networks().items():
            for k, v in net.params().items():
                v[...] = arrays[f"{net_name}/{k}"]
        for name, adam in self._named_adams().items():
            adam.t = int(arrays[f"adam/{name}/t"][0])
            for k in adam.m:
                adam.m[k][...] = arrays[f"adam/{name}/m/{k}"]
                adam.v[k][...] = arrays[f"adam/{name}/v/{k}"]
        for i in range(N_AGENTS):
            j = 0
            while f"buffer{i}/{j:05d}/r" in arrays:
                pre = f"buffer{i}/{j:05d}"
                seq = [(arrays[f"{pre}/obs"][k], arrays[f"{pre}/act"][k],
                        float(arrays[f"{pre}/r"][k]),
                        arrays[f"{pre}/obs_next"][k],
                        bool(arrays[f"{pre}/done"][k]))
                       for k in range(arrays[f"{pre}/r"].size)]
                self.buffers[i].push(seq)
                j += 1
        self.metrics = [list(row) for row in arrays["metrics"]]
        if self.metrics:
            self._last_critic_loss = float(self.metrics[-1][5])
            self._last_mean_q = float(self.metrics[-1][6])
        self.epoch = epoch
        self.episodes_seen = episodes_seen
        self.rng.bit_generator.state = rng_state


# ---------------------------------------------------------------------------
# public entry points

VARIANTS = ("ma_rdpg", "independent", "main_only_ew")


def make_trainer(variant: str, sim: SimConfig, cfg: TrainConfig):
    if variant == "independent":
        return IndependentTrainer(sim, cfg)
    if variant in ("ma_rdpg", "main_only_ew"):
        return MaTrainer(sim, cfg, variant)
    raise ConfigError(f"unknown variant '{variant}'")


def train_independent(sim: SimConfig, cfg: TrainConfig):
    trainer = IndependentTrainer(sim, cfg)
    trainer.run()
    return trainer, trainer.metrics


def train_main_only_with_ew_store(sim: SimConfig, cfg: TrainConfig):
    trainer = MaTrainer(sim, cfg, "main_only_ew")
    trainer.run()
    return trainer, trainer.metrics
