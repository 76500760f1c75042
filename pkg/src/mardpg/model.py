"""Actor, centralized critic, and LSTM communication module, with the loss
and gradient computations used by the training loop.

Actors are deterministic policies mu_i(h_prev, o) with tanh-bounded output.
The critic scores Q(h_prev, o, a, agent) for the jointly-shared objective;
agent identity enters as a one-hot and actions are zero-padded to a common
width so one critic can score either scenario. The communication module is a
single LSTM cell carrying the message h between steps and agents.
"""
from __future__ import annotations

import numpy as np

from .numerics import (
    DenseLayer,
    LstmCell,
    ShapeError,
    StateError,
    _as_vector,
    lstm_backward_through_time,
)


class Actor:
    """Deterministic per-scenario policy: [h_prev; o] -> relu hidden -> tanh action."""

    def __init__(self, agent_index: int, msg_dim: int, obs_dim: int,
                 act_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.agent_index = agent_index
        self.msg_dim = msg_dim
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.l1 = DenseLayer.create(rng, msg_dim + obs_dim, hidden_dim, "relu")
        self.l2 = DenseLayer.create(rng, hidden_dim, act_dim, "tanh")

    @property
    def trainable(self) -> bool:
        return True

    def forward(self, h_prev, o) -> np.ndarray:
        h_prev = _as_vector(h_prev, self.msg_dim, "actor message input")
        o = _as_vector(o, self.obs_dim, "actor observation")
        return self.l2.forward(self.l1.forward(np.concatenate([h_prev, o])))

    def backward(self, d_action):
        """Returns (grads, dh_prev, d_obs) for the most recent forward."""
        dW2, db2, dhid = self.l2.backward(d_action)
        dW1, db1, dx = self.l1.backward(dhid)
        grads = {"l1.W": dW1, "l1.b": db1, "l2.W": dW2, "l2.b": db2}
        return grads, dx[: self.msg_dim], dx[self.msg_dim:]

    def params(self) -> dict:
        return {"l1.W": self.l1.W, "l1.b": self.l1.b,
                "l2.W": self.l2.W, "l2.b": self.l2.b}

    def clone(self) -> "Actor":
        other = object.__new__(Actor)
        other.agent_index = self.agent_index
        other.msg_dim = self.msg_dim
        other.obs_dim = self.obs_dim
        other.act_dim = self.act_dim
        other.l1 = self.l1.clone()
        other.l2 = self.l2.clone()
        return other


class FixedActor:
    """Constant policy (equal ranking weights); not trainable."""

    def __init__(self, agent_index: int, msg_dim: int, obs_dim: int,
                 act_dim: int, value: float = 0.5):
        self.agent_index = agent_index
        self.msg_dim = msg_dim
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.action = np.full(act_dim, float(value))

    @property
    def trainable(self) -> bool:
        return False

    def forward(self, h_prev, o) -> np.ndarray:
        _as_vector(h_prev, self.msg_dim, "actor message input")
        _as_vector(o, self.obs_dim, "actor observation")
        return self.action.copy()

    def backward(self, d_action):
        return {}, np.zeros(self.msg_dim), np.zeros(self.obs_dim)

    def params(self) -> dict:
        return {}

    def clone(self) -> "FixedActor":
        return FixedActor(self.agent_index, self.msg_dim, self.obs_dim,
                          self.act_dim, float(self.action[0]))


class Critic:
    """Centralized action-value network Q(h_prev, o, a, agent)."""

    def __init__(self, msg_dim: int, obs_dim: int, max_act_dim: int,
                 n_agents: int, hidden_dim: int, rng: np.random.Generator):
        self.msg_dim = msg_dim
        self.obs_dim = obs_dim
        self.max_act_dim = max_act_dim
        self.n_agents = n_agents
        n_in = msg_dim + obs_dim + max_act_dim + n_agents
        self.l1 = DenseLayer.create(rng, n_in, hidden_dim, "relu")
        self.l2 = DenseLayer.create(rng, hidden_dim, 1, "identity")

    def _assemble(self, h_prev, o, a, agent: int) -> np.ndarray:
        h_prev = _as_vector(h_prev, self.msg_dim, "critic message input")
        o = _as_vector(o, self.obs_dim, "critic observation")
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 1 or a.size > self.max_act_dim:
            raise ShapeError(f"critic action: got shape {a.shape}, "
                             f"max width {self.max_act_dim}")
        if not 0 <= agent < self.n_agents:
            raise ShapeError(f"critic agent index {agent} out of range")
        a_pad = np.zeros(self.max_act_dim)
        a_pad[: a.size] = a
        onehot = np.zeros(self.n_agents)
        onehot[agent] = 1.0
        return np.concatenate([h_prev, o, a_pad, onehot])

    def forward(self, h_prev, o, a, agent: int) -> float:
        x = self._assemble(h_prev, o, a, agent)
        return float(self.l2.forward(self.l1.forward(x))[0])

    def backward(self, dq: float):
        """Returns (grads, dh_prev, d_obs, d_action_padded)."""
        dW2, db2, dhid = self.l2.backward(np.array([float(dq)]))
        dW1, db1, dx = self.l1.backward(dhid)
        grads = {"l1.W": dW1, "l1.b": db1, "l2.W": dW2, "l2.b": db2}
        m, n = self.msg_dim, self.obs_dim
        return grads, dx[:m], dx[m:m + n], dx[m + n:m + n + self.max_act_dim]

    def params(self) -> dict:
        return {"l1.W": self.l1.W, "l1.b": self.l1.b,
                "l2.W": self.l2.W, "l2.b": self.l2.b}

    def clone(self) -> "Critic":
        other = object.__new__(Critic)
        other.msg_dim = self.msg_dim
        other.obs_dim = self.obs_dim
        other.max_act_dim = self.max_act_dim
        other.n_agents = self.n_agents
        other.l1 = self.l1.clone()
        other.l2 = self.l2.clone()
        return other


class CommModule:
    """LSTM message channel: h_t = LSTM(h_{t-1}, [o_t; a_t])."""

    def __init__(self, msg_dim: int, obs_dim: int, max_act_dim: int,
                 rng: np.random.Generator):
        self.msg_dim = msg_dim
        self.obs_dim = obs_dim
        self.max_act_dim = max_act_dim
        self.cell = LstmCell.create(rng, obs_dim + max_act_dim, msg_dim)

    def initial_state(self):
        return np.zeros(self.msg_dim), np.zeros(self.msg_dim)

    def step(self, h_prev, c_prev, o, a):
        o = _as_vector(o, self.obs_dim, "comm observation")
        a = np.asarray(a, dtype=np.float64)
        a_pad = np.zeros(self.max_act_dim)
        a_pad[: a.size] = a
        return self.cell.step(h_prev, c_prev, np.concatenate([o, a_pad]))

    def replay(self, obs_seq, act_seq):
        """Forward an episode's (o_t, a_t) sequence; returns (h_list, caches).

        h_list[0] is the zero initial message, h_list[t] the message after
        step t; caches[t-1] produced h_list[t].
        """
        if len(obs_seq) != len(act_seq):
            raise StateError("comm replay: observation/action length mismatch")
        h, c = self.initial_state()
        h_list = [h]
        caches = []
        for o, a in zip(obs_seq, act_seq):
            h, c, cache = self.step(h, c, o, a)
            h_list.append(h)
            caches.append(cache)
        return h_list, caches

    def params(self) -> dict:
        return self.cell.params()

    def clone(self) -> "CommModule":
        other = object.__new__(CommModule)
        other.msg_dim = self.msg_dim
        other.obs_dim = self.obs_dim
        other.max_act_dim = self.max_act_dim
        other.cell = self.cell.clone()
        return other


class TargetSet:
    """Frozen copies of critic and actors used for Bellman targets."""

    def __init__(self, actors, critic: Critic, tau: float):
        if not 0.0 < tau <= 1.0:
            raise ValueError(f"target tau must be in (0, 1], got {tau}")
        self.tau = tau
        self.actors = [a.clone() for a in actors]
        self.critic = critic.clone()

    def soft_update(self, actors, critic: Critic) -> None:
        pairs = [(t.params(), o.params()) for t, o in zip(self.actors, actors)]
        pairs.append((self.critic.params(), critic.params()))
        for target, online in pairs:
            for k in target:
                target[k] *= 1.0 - self.tau
                target[k] += self.tau * online[k]


def bellman_target(r: float, terminal: bool, gamma: float, targets: TargetSet,
                   h_t, o_next, next_agent: int) -> float:
    """y = r, or r + gamma * Q_target(h_t, o_next, mu_target(h_t, o_next))."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"discount must be in [0, 1], got {gamma}")
    if terminal:
        return float(r)
    a_next = targets.actors[next_agent].forward(h_t, o_next)
    q_next = targets.critic.forward(h_t, o_next, a_next, next_agent)
    return float(r) + gamma * q_next


def critic_loss_and_grad(critic: Critic, batch):
    """Mean squared Bellman error and its exact gradient.

    batch: iterable of (h_prev, o, a, agent, y); targets y are constants.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("critic_loss_and_grad: empty batch")
    n = len(batch)
    loss = 0.0
    grads = {k: np.zeros_like(v) for k, v in critic.params().items()}
    for h_prev, o, a, agent, y in batch:
        q = critic.forward(h_prev, o, a, agent)
        err = q - float(y)
        loss += err * err / n
        g, _, _, _ = critic.backward(2.0 * err / n)
        for k in grads:
            grads[k] += g[k]
    return loss, grads


def actor_grad(actor: Actor, critic: Critic, batch):
    """Gradient of J = mean_b Q(h, o, mu(h, o)) w.r.t. the actor parameters.

    batch: iterable of (h_prev, o, agent); all items must belong to this
    actor. Critic parameters are held fixed; the caller ascends (negates for
    a minimizing optimizer). Also returns the mean Q for diagnostics.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("actor_grad: empty batch")
    for _, _, agent in batch:
        if agent != actor.agent_index:
            raise ValueError(
                f"actor_grad: batch item for agent {agent} passed to actor "
                f"{actor.agent_index}")
    n = len(batch)
    grads = {k: np.zeros_like(v) for k, v in actor.params().items()}
    mean_q = 0.0
    for h_prev, o, agent, in batch:
        a = actor.forward(h_prev, o)
        q = critic.forward(h_prev, o, a, agent)
        mean_q += q / n
        _, _, _, d_act = critic.backward(1.0 / n)
        g, _, _ = actor.backward(d_act[: actor.act_dim])
        for k in grads:
            grads[k] += g[k]
    return grads, mean_q


def comm_grad(comm: CommModule, caches, dh_per_step):
    """BPTT gradient w.r.t. the communication parameters given the per-step
    upstream gradients on each generated message."""
    return lstm_backward_through_time(comm.cell, caches, dh_per_step)


def episode_comm_objective(comm: CommModule, critic: Critic, actors,
                           obs_seq, act_seq, agent_seq, ys,
                           mode: str = "both") -> float:
    """Scalar objective whose psi-gradient the training loop assembles:
    sum_t [(Q(h_{t-1}, o_t, a_t) - y_t)^2 - Q(h_{t-1}, o_t, mu(h_{t-1}, o_t))]
    with h recomputed from the current communication parameters and y_t
    treated as constants. Used directly by the finite-difference oracle.
    """
    if mode not in ("both", "critic_only"):
        raise ValueError(f"unknown comm_loss_mode '{mode}'")
    h_list, _ = comm.replay(obs_seq, act_seq)
    total = 0.0
    for t, (o, a, agent, y) in enumerate(zip(obs_seq, act_seq, agent_seq, ys)):
        h_prev = h_list[t]
        err = critic.forward(h_prev, o, a, agent) - float(y)
        total += err * err
        if mode == "both":
            a_pi = actors[agent].forward(h_prev, o)
            total -= critic.forward(h_prev, o, a_pi, agent)
    return total


def episode_comm_grad(comm: CommModule, critic: Critic, actors,
                      obs_seq, act_seq, agent_seq, ys,
                      mode: str = "both") -> dict:
    """Exact gradient of episode_comm_objective w.r.t. the comm parameters."""
    if mode not in ("both", "critic_only"):
        raise ValueError(f"unknown comm_loss_mode '{mode}'")
    h_list, caches = comm.replay(obs_seq, act_seq)
    T = len(caches)
    dh_per_step = [np.zeros(comm.msg_dim) for _ in range(T)]
    for t, (o, a, agent, y) in enumerate(zip(obs_seq, act_seq, agent_seq, ys)):
        h_prev = h_list[t]
        dh = np.zeros(comm.msg_dim)
        err = critic.forward(h_prev, o, a, agent) - float(y)
        _, dh_c, _, _ = critic.backward(2.0 * err)
        dh += dh_c
        if mode == "both":
            a_pi = actors[agent].forward(h_prev, o)
            critic.forward(h_prev, o, a_pi, agent)
            _, dh_q, _, d_act = critic.backward(1.0)
            _, dh_a, _ = actors[agent].backward(d_act[: actors[agent].act_dim])
            dh -= dh_q + dh_a
        # h_prev = h_list[t] was produced by caches[t-1]; h_0 is a constant
        if t >= 1:
            dh_per_step[t - 1] += dh
    return comm_grad(comm, caches, dh_per_step)
