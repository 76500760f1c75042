"""Episodic replay training: episode collection with exploration noise, a
FIFO episode buffer, and backward-in-time minibatch updates of the critic,
the active actors, and the communication module, plus evaluation.

Messages are recomputed from the current communication parameters when an
episode is replayed; the stored message transcript is only used to test
replay self-consistency. The backward-in-time loop (t = T down to 1) is kept
even though targets could be computed forward, so the update order is easy
to audit.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .env import MAIN_SEARCH, N_AGENTS, ConfigError, MarketplaceEnv, SimConfig
from .model import (
    Actor,
    CommModule,
    Critic,
    FixedActor,
    TargetSet,
    bellman_target,
    comm_grad,
)
from .numerics import (
    Adam,
    StateError,
    add_params,
    clip_grad_norm,
    scale_params,
    zeros_like_params,
)


class InsufficientDataError(ValueError):
    """Replay buffer holds fewer items than the requested minibatch."""


# ---------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    gamma: float = 0.95
    episodes_per_epoch: int = 10      # M collections per training step
    epochs: int = 120
    minibatch_size: int = 16          # B episodes per update
    updates_per_epoch: int = 10
    buffer_capacity: int = 2000
    noise_std: float = 0.3
    noise_std_final: float = 0.02
    lr_actor: float = 1e-3
    lr_actor_final: float = 5e-5     # linear decay, like the noise schedule
    lr_critic: float = 1e-3
    lr_comm: float = 3e-4
    lr_comm_final: float = 3e-5
    target_tau: float = 0.1
    eval_interval: int = 5
    eval_episodes: int = 10
    msg_dim: int = 8
    actor_hidden: int = 32
    critic_hidden: int = 32
    comm_loss_mode: str = "both"      # or "critic_only"
    grad_clip: float = 5.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        if self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be >= 1")
        if self.noise_std < 0.0 or self.noise_std_final < 0.0:
            raise ConfigError("exploration noise must be >= 0")
        if min(self.lr_actor, self.lr_actor_final, self.lr_critic,
               self.lr_comm, self.lr_comm_final) < 0.0:
            raise ConfigError("learning rates must be >= 0")
        if not 0.0 < self.target_tau <= 1.0:
            raise ConfigError("target_tau must be in (0, 1]")
        if self.epochs < 0 or self.episodes_per_epoch < 1:
            raise ConfigError("epochs must be >= 0 and episodes_per_epoch >= 1")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("eval_interval and eval_episodes must be >= 1")
        if self.comm_loss_mode not in ("both", "critic_only"):
            raise ConfigError(
                f"unknown comm_loss_mode '{self.comm_loss_mode}'")
        if min(self.msg_dim, self.actor_hidden, self.critic_hidden) < 1:
            raise ConfigError("network dimensions must be positive")

    def noise_for_epoch(self, epoch: int) -> float:
        return self._linear(self.noise_std, self.noise_std_final, epoch)

    def lr_actor_for_epoch(self, epoch: int) -> float:
        return self._linear(self.lr_actor, self.lr_actor_final, epoch)

    def lr_comm_for_epoch(self, epoch: int) -> float:
        return self._linear(self.lr_comm, self.lr_comm_final, epoch)

    def _linear(self, start: float, end: float, epoch: int) -> float:
        if self.epochs <= 1:
            return start
        frac = min(epoch / (self.epochs - 1), 1.0)
        return start + (end - start) * frac


# ---------------------------------------------------------------------------
# episodes and replay buffer

@dataclass
class EpisodeStep:
    t: int
    agent: int
    h_prev: np.ndarray
    o: np.ndarray
    a: np.ndarray
    r: float
    terminal: bool


@dataclass
class Episode:
    steps: list
    final_message: np.ndarray

    def __len__(self) -> int:
        return len(self.steps)

    def total_reward(self) -> float:
        return float(sum(s.r for s in self.steps))

    def reward_by_agent(self) -> np.ndarray:
        out = np.zeros(N_AGENTS)
        for s in self.steps:
            out[s.agent] += s.r
        return out

    def messages(self) -> np.ndarray:
        """Stored message transcript h_0 .. h_T, one row per message."""
        return np.vstack([self.steps[0].h_prev]
                         + [s.h_prev for s in self.steps[1:]]
                         + [self.final_message])

    def to_arrays(self) -> dict:
        return {
            "obs": np.vstack([s.o for s in self.steps]),
            "act": np.vstack([s.a for s in self.steps]),
            "r": np.array([s.r for s in self.steps]),
            "agent": np.array([s.agent for s in self.steps], dtype=np.int64),
            "h": self.messages(),
            "terminal": np.array([int(s.terminal) for s in self.steps],
                                 dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Episode":
        obs, act, r = arrays["obs"], arrays["act"], arrays["r"]
        agent, h, term = arrays["agent"], arrays["h"], arrays["terminal"]
        steps = [EpisodeStep(t=t + 1, agent=int(agent[t]), h_prev=h[t],
                             o=obs[t], a=act[t], r=float(r[t]),
                             terminal=bool(term[t]))
                 for t in range(len(r))]
        return cls(steps=steps, final_message=h[len(r)])


class ReplayBuffer:
    """Bounded FIFO of stored items (episodes or transition sequences)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, item) -> None:
        if len(item) == 0:
            raise ValueError("refusing to store an empty episode")
        self._items.append(item)

    def sample(self, n: int, rng: np.random.Generator) -> list:
        if len(self._items) < n:
            raise InsufficientDataError(
                f"buffer holds {len(self._items)} items, need {n}")
        idx = rng.choice(len(self._items), size=n, replace=False)
        return [self._items[int(i)] for i in idx]

    def items(self) -> list:
        return list(self._items)


# ---------------------------------------------------------------------------
# rollouts

def collect_episode(env: MarketplaceEnv, actors, comm: CommModule,
                    noise_std: float, rng: np.random.Generator) -> Episode:
    """Roll one episode; the stored transcript carries the noised actions and
    the messages generated from them, so it is self-consistent."""
    if env.done:
        raise StateError("collect_episode: environment is terminal; reset first")
    h, c = comm.initial_state()
    steps = []
    t = 1
    while not env.done:
        o = env.current_obs
        agent = env.active_agent
        a = actors[agent].forward(h, o)
        if noise_std > 0.0:
            a = np.clip(a + rng.normal(0.0, noise_std, size=a.shape),
                        -1.0, 1.0)
        res = env.step(a)
        h_next, c, _ = comm.step(h, c, o, a)
        steps.append(EpisodeStep(t=t, agent=agent, h_prev=h, o=o, a=a,
                                 r=res.reward, terminal=res.terminal))
        h = h_next
        t += 1
    return Episode(steps=steps, final_message=h)


def evaluate(actors, comm, sim: SimConfig, n_episodes: int, seed: int) -> dict:
    """Noiseless rollouts on a dedicated seed stream; never mutates models.

    comm may be None (baselines), in which case messages stay zero.
    """
    if n_episodes < 1:
        raise ValueError("evaluate: n_episodes must be >= 1")
    env = MarketplaceEnv(sim)
    msg_dim = actors[0].msg_dim
    totals = np.zeros(n_episodes)
    mains = np.zeros(n_episodes)
    stores = np.zeros(n_episodes)
    act_sum = np.zeros((N_AGENTS, sim.act_dim))
    act_count = np.zeros(N_AGENTS)
    for j in range(n_episodes):
        env.reset(seed + j)
        h = np.zeros(msg_dim)
        c = np.zeros(msg_dim)
        while not env.done:
            o = env.current_obs
            agent = env.active_agent
            a = actors[agent].forward(h, o)
            res = env.step(a)
            if comm is not None:
                h, c, _ = comm.step(h, c, o, a)
            totals[j] += res.reward
            mains[j] += res.info["reward_main"]
            stores[j] += res.info["reward_store"]
            act_sum[agent] += a
            act_count[agent] += 1
    mean_actions = np.zeros_like(act_sum)
    for i in range(N_AGENTS):
        if act_count[i] > 0:
            mean_actions[i] = act_sum[i] / act_count[i]
    return {
        "mean_total_reward": float(totals.mean()),
        "reward_main": float(mains.mean()),
        "reward_store": float(stores.mean()),
        "mean_actions": mean_actions,
    }


# ---------------------------------------------------------------------------
# metrics CSV

def metrics_header(act_dim: int) -> list:
    cols = ["variant", "epoch", "episodes_seen", "mean_total_reward",
            "reward_main", "reward_store", "critic_loss", "mean_q"]
    for i in range(N_AGENTS):
        cols += [f"mean_action_{i}_{j}" for j in range(act_dim)]
    return cols


def format_metrics_csv(variant: str, rows, act_dim: int) -> str:
    lines = [",".join(metrics_header(act_dim))]
    for row in rows:
        fields = [variant, str(int(row[0])), str(int(row[1]))]
        fields += [repr(float(v)) for v in row[2:]]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def run_training(sim: SimConfig, cfg: TrainConfig, variant: str = "ma_rdpg"):
    """Train the joint model end to end; returns (trainer, metrics rows)."""
    trainer = MaTrainer(sim, cfg, variant)
    trainer.run()
    return trainer, trainer.metrics


# ---------------------------------------------------------------------------
# joint trainer (shared critic + communication; also drives the EW baseline)

class MaTrainer:
    """Joint recurrent actor-critic training over both scenarios.

    variant "ma_rdpg" trains both actors; "main_only_ew" pins the store
    actor to constant equal ranking weights and trains only the main actor
    (still on total reward).
    """

    def __init__(self, sim: SimConfig, cfg: TrainConfig,
                 variant: str = "ma_rdpg"):
        sim.validate()
        cfg.validate()
        if variant not in ("ma_rdpg", "main_only_ew"):
            raise ConfigError(f"MaTrainer cannot run variant '{variant}'")
        self.sim = sim
        self.cfg = cfg
        self.variant = variant
        self.env = MarketplaceEnv(sim)
        self.rng = np.random.default_rng(cfg.seed)

        msg, obs, act = cfg.msg_dim, sim.obs_dim, sim.act_dim
        self.actors = [Actor(0, msg, obs, act, cfg.actor_hidden, self.rng)]
        if variant == "main_only_ew":
            self.actors.append(FixedActor(1, msg, obs, act, 0.5))
        else:
            self.actors.append(Actor(1, msg, obs, act, cfg.actor_hidden,
                                     self.rng))
        self.critic = Critic(msg, obs, act, N_AGENTS, cfg.critic_hidden,
                             self.rng)
        self.comm = CommModule(msg, obs, act, self.rng)
        self.targets = TargetSet(self.actors, self.critic, cfg.target_tau)

        self.adam_actors = {
            i: Adam(a.params(), lr=cfg.lr_actor)
            for i, a in enumerate(self.actors) if a.trainable
        }
        self.adam_critic = Adam(self.critic.params(), lr=cfg.lr_critic)
        self.adam_comm = Adam(self.comm.params(), lr=cfg.lr_comm)

        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.epoch = 0
        self.episodes_seen = 0
        self.metrics: list = []
        self._last_critic_loss = float("nan")
        self._last_mean_q = float("nan")
        self._eval_seed = cfg.seed * 1_000_003 + 998_244_353

    # -- core update --------------------------------------------------

    def train_on_minibatch(self, batch) -> tuple:
        """One Adam step per network from a minibatch of episodes."""
        if not batch:
            raise ValueError("train_on_minibatch: empty batch")
        cfg = self.cfg
        n_total = sum(len(ep) for ep in batch)
        acc_critic = zeros_like_params(self.critic.params())
        acc_comm = zeros_like_params(self.comm.params())
        acc_actor = {i: zeros_like_params(self.actors[i].params())
                     for i in self.adam_actors}
        n_actor = {i: 0 for i in self.adam_actors}
        loss_sum = 0.0
        q_sum = 0.0
        q_count = 0

        for ep in batch:
            obs_seq = [s.o for s in ep.steps]
            act_seq = [s.a for s in ep.steps]
            h_list, caches = self.comm.replay(obs_seq, act_seq)
            T = len(ep)
            dh_per_step = [np.zeros(cfg.msg_dim) for _ in range(T)]
            for t in range(T - 1, -1, -1):
                s = ep.steps[t]
                h_prev = h_list[t]
                if s.terminal:
                    y = float(s.r)
                else:
                    nxt = ep.steps[t + 1]
                    y = bellman_target(s.r, False, cfg.gamma, self.targets,
                                       h_list[t + 1], nxt.o, nxt.agent)
                # Bellman regression on the stored (noised) action
                q = self.critic.forward(h_prev, s.o, s.a, s.agent)
                err = q - y
                loss_sum += err * err
                gc, dh_c, _, _ = self.critic.backward(2.0 * err)
                add_params(acc_critic, gc)
                dh = dh_c.copy()
                # actor objective on the replayed noiseless action
                actor = self.actors[s.agent]
                a_pi = actor.forward(h_prev, s.o)
                q_pi = self.critic.forward(h_prev, s.o, a_pi, s.agent)
                q_sum += q_pi
                q_count += 1
                _, dh_q, _, d_act = self.critic.backward(1.0)
                ga, dh_a, _ = actor.backward(d_act[: actor.act_dim])
                if actor.trainable:
                    add_params(acc_actor[s.agent], ga)
                    n_actor[s.agent] += 1
                if cfg.comm_loss_mode == "both":
                    dh -= dh_q + dh_a
                if t >= 1:  # h_0 is a constant, nothing upstream of it
                    dh_per_step[t - 1] = dh_per_step[t - 1] + dh
            add_params(acc_comm, comm_grad(self.comm, caches, dh_per_step))

        self.adam_critic.step(
            clip_grad_norm(scale_params(acc_critic, 1.0 / n_total),
                           cfg.grad_clip))
        for i, adam in self.adam_actors.items():
            if n_actor[i] > 0:  # ascent: negate for the minimizing optimizer
                adam.step(clip_grad_norm(
                    scale_params(acc_actor[i], -1.0 / n_actor[i]),
                    cfg.grad_clip))
        self.adam_comm.step(
            clip_grad_norm(scale_params(acc_comm, 1.0 / n_total),
                           cfg.grad_clip))
        self.targets.soft_update(self.actors, self.critic)
        return loss_sum / n_total, q_sum / q_count

    # -- epoch loop ----------------------------------------------------

    def train_epoch(self) -> None:
        cfg = self.cfg
        std = cfg.noise_for_epoch(self.epoch)
        lr_a = cfg.lr_actor_for_epoch(self.epoch)
        for adam in self.adam_actors.values():
            adam.lr = lr_a
        self.adam_comm.lr = cfg.lr_comm_for_epoch(self.epoch)
        for _ in range(cfg.episodes_per_epoch):
            ep_seed = int(self.rng.integers(2 ** 63 - 1))
            self.env.reset(ep_seed)
            self.buffer.push(collect_episode(self.env, self.actors,
                                             self.comm, std, self.rng))
            self.episodes_seen += 1
        losses = []
        qs = []
        for _ in range(cfg.updates_per_epoch):
            try:
                batch = self.buffer.sample(cfg.minibatch_size, self.rng)
            except InsufficientDataError:
                break
            loss, mean_q = self.train_on_minibatch(batch)
            losses.append(loss)
            qs.append(mean_q)
        self._last_critic_loss = float(np.mean(losses)) if losses else float("nan")
        self._last_mean_q = float(np.mean(qs)) if qs else float("nan")
        self.epoch += 1

    def record_eval(self) -> None:
        ev = evaluate(self.actors, self.comm, self.sim,
                      self.cfg.eval_episodes, self._eval_seed)
        row = [float(self.epoch), float(self.episodes_seen),
               ev["mean_total_reward"], ev["reward_main"], ev["reward_store"],
               self._last_critic_loss, self._last_mean_q]
        row += list(ev["mean_actions"].ravel())
        self.metrics.append(row)

    def run(self, until: int | None = None) -> None:
        """Train to cfg.epochs, or stop early at `until` (checkpointable
        midpoint; the noise schedule still follows cfg.epochs)."""
        cfg = self.cfg
        stop = cfg.epochs if until is None else min(until, cfg.epochs)
        if stop == 0:
            return
        if self.epoch == 0 and not self.metrics:
            self.record_eval()  # untrained baseline row
        while self.epoch < stop:
            self.train_epoch()
            if self.epoch % cfg.eval_interval == 0 or self.epoch == cfg.epochs:
                self.record_eval()

    # -- persistence ----------------------------------------------------

    def named_networks(self) -> dict:
        nets = {"actor0": self.actors[0], "critic": self.critic,
                "comm": self.comm, "target_actor0": self.targets.actors[0],
                "target_critic": self.targets.critic}
        if self.actors[1].trainable:
            nets["actor1"] = self.actors[1]
            nets["target_actor1"] = self.targets.actors[1]
        return nets

    def to_arrays(self) -> dict:
        arrays = {}
        for net_name, net in self.named_networks().items():
            for k, v in net.params().items():
                arrays[f"{net_name}/{k}"] = v.copy()
        adams = {"critic": self.adam_critic, "comm": self.adam_comm}
        for i, adam in self.adam_actors.items():
            adams[f"actor{i}"] = adam
        for name, adam in adams.items():
            arrays[f"adam/{name}/t"] = np.array([adam.t], dtype=np.int64)
            for k in adam.m:
                arrays[f"adam/{name}/m/{k}"] = adam.m[k].copy()
                arrays[f"adam/{name}/v/{k}"] = adam.v[k].copy()
        for j, ep in enumerate(self.buffer.items()):
            for k, v in ep.to_arrays().items():
                arrays[f"buffer/{j:05d}/{k}"] = v
        n_cols = len(metrics_header(self.sim.act_dim)) - 1
        arrays["metrics"] = (np.array(self.metrics, dtype=np.float64)
                             if self.metrics else np.zeros((0, n_cols)))
        return arrays

    def load_arrays(self, arrays: dict, epoch: int, episodes_seen: int,
                    rng_state: dict) -> None:
        for net_name, net in self.named_networks().items():
            for k, v in net.params().items():
                v[...] = arrays[f"{net_name}/{k}"]
        adams = {"critic": self.adam_critic, "comm": self.adam_comm}
        for i, adam in self.adam_actors.items():
            adams[f"actor{i}"] = adam
        for name, adam in adams.items():
            adam.t = int(arrays[f"adam/{name}/t"][0])
            for k in adam.m:
                adam.m[k][...] = arrays[f"adam/{name}/m/{k}"]
                adam.v[k][...] = arrays[f"adam/{name}/v/{k}"]
        j = 0
        while f"buffer/{j:05d}/r" in arrays:
            fields = {k: arrays[f"buffer/{j:05d}/{k}"]
                      for k in ("obs", "act", "r", "agent", "h", "terminal")}
            self.buffer.push(Episode.from_arrays(fields))
            j += 1
        self.metrics = [list(row) for row in arrays["metrics"]]
        if self.metrics:
            last = self.metrics[-1]
            self._last_critic_loss = float(last[5])
            self._last_mean_q = float(last[6])
        self.epoch = epoch
        self.episodes_seen = episodes_seen
        self.rng.bit_generator.state = rng_state
