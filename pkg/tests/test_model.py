"""Actor/critic/communication-module tests.

Every gradient path the trainer uses — critic regression, actor objective,
and episode-level communication BPTT — is validated against the central
finite-difference oracle on tiny networks.
"""
import numpy as np
import pytest

from mardpg.model import (
    Actor,
    CommModule,
    Critic,
    FixedActor,
    TargetSet,
    actor_grad,
    bellman_target,
    critic_loss_and_grad,
    episode_comm_grad,
    episode_comm_objective,
)
from mardpg.numerics import (
    ShapeError,
    assign_flat,
    finite_diff_grad,
    flatten_params,
    grad_matches,
)

MSG, OBS, ACT, HID, NA = 3, 4, 2, 5, 2


def make_nets(seed):
    rng = np.random.default_rng(seed)
    actors = [Actor(i, MSG, OBS, ACT, HID, rng) for i in range(NA)]
    critic = Critic(MSG, OBS, ACT, NA, HID, rng)
    comm = CommModule(MSG, OBS, ACT, rng)
    return actors, critic, comm, rng


# ---------------------------------------------------------------------------
# forward behavior

def test_actor_zero_params_zero_action():
    actors, _, _, rng = make_nets(0)
    actor = actors[0]
    for p in actor.params().values():
        p[...] = 0.0
    a = actor.forward(np.ones(MSG), np.ones(OBS))
    assert np.array_equal(a, np.zeros(ACT))


def test_actor_deterministic_and_bounded():
    actors, _, _, rng = make_nets(1)
    h, o = rng.normal(size=MSG), rng.normal(size=OBS)
    a1 = actors[0].forward(h, o)
    a2 = actors[0].forward(h, o)
    assert np.array_equal(a1, a2)
    assert np.all(np.abs(a1) < 1.0)


def test_actor_shape_errors():
    actors, _, _, _ = make_nets(2)
    with pytest.raises(ShapeError):
        actors[0].forward(np.zeros(MSG + 1), np.zeros(OBS))
    with pytest.raises(ShapeError):
        actors[0].forward(np.zeros(MSG), np.zeros(OBS - 1))


def test_fixed_actor_constant():
    fx = FixedActor(1, MSG, OBS, ACT, value=0.5)
    assert not fx.trainable
    a = fx.forward(np.zeros(MSG), np.ones(OBS))
    assert np.array_equal(a, np.full(ACT, 0.5))
    grads, dh, dobs = fx.backward(np.ones(ACT))
    assert grads == {}
    assert not dh.any() and not dobs.any()


def test_critic_scalar_and_agent_range():
    _, critic, _, rng = make_nets(3)
    q = critic.forward(rng.normal(size=MSG), rng.normal(size=OBS),
                       rng.normal(size=ACT), 1)
    assert isinstance(q, float) and np.isfinite(q)
    with pytest.raises(ShapeError):
        critic.forward(np.zeros(MSG), np.zeros(OBS), np.zeros(ACT), NA)


def test_comm_initial_message_zero():
    _, _, comm, rng = make_nets(4)
    obs = [rng.normal(size=OBS) for _ in range(3)]
    act = [rng.normal(size=ACT) for _ in range(3)]
    h_list, caches = comm.replay(obs, act)
    assert len(h_list) == 4 and len(caches) == 3
    assert np.array_equal(h_list[0], np.zeros(MSG))


# ---------------------------------------------------------------------------
# Bellman targets and target networks

def test_bellman_terminal_equals_reward():
    actors, critic, _, _ = make_nets(5)
    targets = TargetSet(actors, critic, tau=0.01)
    y = bellman_target(1.25, True, 0.95, targets, np.zeros(MSG),
                       np.zeros(OBS), 0)
    assert y == 1.25


def test_bellman_gamma_zero_equals_reward():
    actors, critic, _, rng = make_nets(6)
    targets = TargetSet(actors, critic, tau=0.01)
    y = bellman_target(0.7, False, 0.0, targets, rng.normal(size=MSG),
                       rng.normal(size=OBS), 1)
    assert y == pytest.approx(0.7)


def test_bellman_matches_hand_computation():
    actors, critic, _, rng = make_nets(7)
    targets = TargetSet(actors, critic, tau=0.01)
    h, o = rng.normal(size=MSG), rng.normal(size=OBS)
    a = targets.actors[1].forward(h, o)
    expected = 0.3 + 0.9 * targets.critic.forward(h, o, a, 1)
    assert bellman_target(0.3, False, 0.9, targets, h, o, 1) \
        == pytest.approx(expected)


def test_target_soft_update_convex_combination():
    actors, critic, _, rng = make_nets(8)
    targets = TargetSet(actors, critic, tau=0.25)
    before = flatten_params(targets.critic.params()).copy()
    online = flatten_params(critic.params())
    targets.soft_update(actors, critic)
    after = flatten_params(targets.critic.params())
    assert np.allclose(after, 0.75 * before + 0.25 * online)


def test_target_tau_one_copies_online():
    actors, critic, _, _ = make_nets(9)
    targets = TargetSet(actors, critic, tau=1.0)
    for p in critic.params().values():
        p += 1.0
    targets.soft_update(actors, critic)
    assert np.array_equal(flatten_params(targets.critic.params()),
                          flatten_params(critic.params()))


# ---------------------------------------------------------------------------
# gradient oracles

def random_batch(rng, n):
    return [(rng.normal(size=MSG), rng.normal(size=OBS),
             rng.uniform(-1, 1, ACT), int(rng.integers(NA)),
             float(rng.normal())) for _ in range(n)]


@pytest.mark.parametrize("seed", range(5))
def test_critic_loss_grad_matches_finite_diff(seed):
    actors, critic, _, rng = make_nets(seed)
    batch = random_batch(rng, 4)
    params = critic.params()
    flat0 = flatten_params(params).copy()

    def f(flat):
        assign_flat(params, flat)
        loss, _ = critic_loss_and_grad(critic.clone(), batch)
        return loss

    numeric = finite_diff_grad(f, flat0)
    assign_flat(params, flat0)
    _, grads = critic_loss_and_grad(critic, batch)
    assert grad_matches(flatten_params(grads), numeric)


@pytest.mark.parametrize("seed", range(5))
def test_actor_grad_matches_finite_diff(seed):
    actors, critic, _, rng = make_nets(seed + 100)
    actor = actors[0]
    batch = [(rng.normal(size=MSG), rng.normal(size=OBS), 0)
             for _ in range(4)]
    params = actor.params()
    flat0 = flatten_params(params).copy()

    def f(flat):
        assign_flat(params, flat)
        probe = actor.clone()
        return float(np.mean([critic.forward(h, o, probe.forward(h, o), ag)
                              for h, o, ag in batch]))

    numeric = finite_diff_grad(f, flat0)
    assign_flat(params, flat0)
    grads, mean_q = actor_grad(actor, critic, batch)
    assert grad_matches(flatten_params(grads), numeric)
    assert mean_q == pytest.approx(f(flat0))


def test_actor_grad_rejects_foreign_agent():
    actors, critic, _, rng = make_nets(11)
    batch = [(np.zeros(MSG), np.zeros(OBS), 1)]
    with pytest.raises(ValueError):
        actor_grad(actors[0], critic, batch)


def test_critic_grad_leaves_inputs_unchanged():
    actors, critic, _, rng = make_nets(12)
    batch = random_batch(rng, 3)
    actor_before = flatten_params(actors[0].params()).copy()
    critic_loss_and_grad(critic, batch)
    assert np.array_equal(actor_before, flatten_params(actors[0].params()))


@pytest.mark.parametrize("mode", ["both", "critic_only"])
@pytest.mark.parametrize("seed", range(5))
def test_episode_comm_grad_matches_finite_diff(mode, seed):
    actors, critic, comm, rng = make_nets(seed + 200)
    T = 5
    obs_seq = [rng.normal(size=OBS) for _ in range(T)]
    act_seq = [rng.uniform(-1, 1, ACT) for _ in range(T)]
    agent_seq = [int(rng.integers(NA)) for _ in range(T)]
    ys = rng.normal(size=T)

    params = comm.params()
    flat0 = flatten_params(params).copy()

    def f(flat):
        assign_flat(params, flat)
        return episode_comm_objective(comm.clone(), critic, actors,
                                      obs_seq, act_seq, agent_seq, ys, mode)

    numeric = finite_diff_grad(f, flat0)
    assign_flat(params, flat0)
    grads = episode_comm_grad(comm, critic, actors, obs_seq, act_seq,
                              agent_seq, ys, mode)
    assert grad_matches(flatten_params(grads), numeric)


def test_comm_objective_rejects_unknown_mode():
    actors, critic, comm, rng = make_nets(13)
    with pytest.raises(ValueError):
        episode_comm_objective(comm, critic, actors, [], [], [], [],
                               mode="actor_only")
