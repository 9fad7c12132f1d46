import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from scipy import integrate, stats

from lifespan_rl.agent import SAC, Batch, ReplayBuffer, SacConfig, sample_ready_batch, squashed_log_prob
from lifespan_rl.errors import ContractError, NotReady, NumericalFault
from lifespan_rl.reward import ArnConfig, EpisodeOutcome, RewardModel

torch.set_num_threads(1)
T = lambda x: torch.as_tensor(np.asarray(x, dtype=float), dtype=torch.float64)
SMALL = SacConfig(hidden=8, a_max=0.03)


def random_batch(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return Batch(
        obs=T(rng.normal(size=(n, 4)) * 0.1),
        act=T(rng.uniform(-0.9, 0.9, size=(n, 2))),
        reward=T(rng.normal(size=n)),
        next_obs=T(rng.normal(size=(n, 4)) * 0.1),
        done=T(rng.integers(0, 2, size=n)),
        timestep=np.zeros(n, dtype=int),
        episode=np.zeros(n, dtype=int),
    )


def flat_params(module):
    return [p for p in module.parameters()]


def fd_check(loss_fn, params, h=1e-6):
    """Central differences over every scalar of ``params`` vs autograd."""
    for p in params:
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    analytic = torch.cat([g.reshape(-1) for g in grads])
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                numeric.append((up - down) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    return float(torch.linalg.norm(analytic - numeric) / torch.linalg.norm(numeric))


# --- act ----------------------------------------------------------------------
def test_deterministic_act_repeatable():
    agent = SAC(SacConfig(a_max=0.03), seed=0)
    obs = np.array([0.1, 0.2, -0.05, 0.3])
    assert np.array_equal(agent.act(obs, deterministic=True), agent.act(obs, deterministic=True))


def test_actions_within_bounds():
    agent = SAC(SacConfig(a_max=0.03), seed=1)
    obs = np.random.default_rng(0).normal(size=(10_000, 4))
    a = agent.act(obs)
    assert a.shape == (10_000, 2)
    assert np.all(np.abs(a) <= 0.03)


def test_fresh_policy_mean_near_zero():
    agent = SAC(SacConfig(a_max=0.03), seed=2)
    a = agent.act(np.zeros((10_000, 4)))
    assert np.all(np.abs(a.mean(axis=0)) < 0.1 * 0.03)


def test_same_seed_same_network():
    a, b = SAC(SacConfig(), seed=5), SAC(SacConfig(), seed=5)
    for (_, p), (_, q) in zip(a.actor.named_parameters(), b.actor.named_parameters()):
        assert torch.equal(p, q)


def test_act_rejects_nan_observation():
    with pytest.raises(ContractError):
        SAC(SacConfig(), seed=0).act(np.array([np.nan, 0, 0, 0]))


def test_nan_parameters_fault():
    agent = SAC(SacConfig(), seed=0)
    with torch.no_grad():
        agent.actor.mu.weight.fill_(float("nan"))
    with pytest.raises(NumericalFault):
        agent.act(np.zeros(4), deterministic=True)


# --- critic -------------------------------------------------------------------
def test_critic_converges_to_reward_when_myopic():
    cfg = SacConfig(hidden=16, gamma=0.0, alpha=1e-300, auto_alpha=False, lr=1e-2)
    agent = SAC(cfg, seed=0)
    batch = Batch(T([[0.1, -0.2, 0.3, 0.05]]), T([[0.2, -0.4]]), T([0.37]), T([[0.0, 0.0, 0.0, 0.0]]),
                  T([0.0]), np.zeros(1, int), np.zeros(1, int))
    for _ in range(2000):
        agent.critic_update(batch)
    with torch.no_grad():
        assert abs(agent.q1(batch.obs, batch.act).item() - 0.37) < 1e-3
        assert abs(agent.q2(batch.obs, batch.act).item() - 0.37) < 1e-3


def test_zero_learning_rate_leaves_parameters():
    agent = SAC(SacConfig(lr=0.0), seed=0)
    before = {k: v.clone() for k, v in agent.q1.state_dict().items()}
    actor_before = {k: v.clone() for k, v in agent.actor.state_dict().items()}
    batch = random_batch()
    agent.critic_update(batch)
    agent.critic_update(batch)
    agent.actor_update(batch)
    for k, v in agent.q1.state_dict().items():
        assert torch.equal(v, before[k])
    for k, v in agent.actor.state_dict().items():
        assert torch.equal(v, actor_before[k])


def test_double_q_target_uses_minimum():
    agent = SAC(SacConfig(hidden=8, gamma=0.5, alpha=0.1, auto_alpha=False), seed=3)
    batch = random_batch(5)
    noise = agent.noise(batch.act.shape)
    loss = agent.critic_loss(batch, noise)
    with torch.no_grad():
        a, logp = agent.actor.sample(batch.next_obs, noise)
        qmin = torch.minimum(agent.q1_target(batch.next_obs, a), agent.q2_target(batch.next_obs, a))
        y = batch.reward + 0.5 * (1 - batch.done) * (qmin - 0.1 * logp)
        want = ((agent.q1(batch.obs, batch.act) - y) ** 2).mean() + ((agent.q2(batch.obs, batch.act) - y) ** 2).mean()
    assert loss.item() == pytest.approx(want.item(), rel=1e-12)


def test_critic_gradient_matches_finite_differences():
    agent = SAC(replace(SMALL, alpha=0.3, auto_alpha=False), seed=4)
    batch = random_batch(6, seed=1)
    noise = agent.noise(batch.act.shape)
    params = flat_params(agent.q1) + flat_params(agent.q2)
    err = fd_check(lambda: agent.critic_loss(batch, noise), params)
    assert err < 1e-4


def test_actor_gradient_matches_finite_differences():
    agent = SAC(replace(SMALL, alpha=0.3, auto_alpha=False), seed=5)
    batch = random_batch(6, seed=2)
    noise = agent.noise(batch.act.shape)
    params = flat_params(agent.actor)
    err = fd_check(lambda: agent.actor_loss(batch.obs, noise)[0], params)
    assert err < 1e-4


def test_flat_q_zero_entropy_weight_gives_zero_policy_gradient():
    agent = SAC(replace(SMALL, alpha=1e-300, auto_alpha=False), seed=6)
    with torch.no_grad():
        for q in (agent.q1, agent.q2):
            for layer in q.net:
                if isinstance(layer, torch.nn.Linear):
                    layer.weight.zero_()
            q.net[-1].bias.fill_(2.5)
    batch = random_batch()
    loss, _ = agent.actor_loss(batch.obs, agent.noise(batch.act.shape))
    grads = torch.autograd.grad(loss, list(agent.actor.parameters()), allow_unused=True)
    norm = math.sqrt(sum(float((g**2).sum()) for g in grads if g is not None))
    assert norm < 1e-8


def test_entropy_increases_under_pure_entropy_objective():
    agent = SAC(SacConfig(hidden=16, alpha=10.0, auto_alpha=False, lr=1e-3), seed=7)
    with torch.no_grad():
        for q in (agent.q1, agent.q2):
            for p in q.parameters():
                p.zero_()
    batch = random_batch(32, seed=3)

    def entropy():
        with torch.no_grad():
            _, logp = agent.actor.sample(batch.obs, torch.randn((2000, 32, 2), generator=torch.Generator().manual_seed(0), dtype=torch.float64))
        return -logp.mean().item()

    before = entropy()
    for _ in range(200):
        agent.actor_update(batch)
    assert entropy() > before + 0.1


def test_temperature_moves_toward_target_entropy():
    agent = SAC(SacConfig(hidden=8), seed=8)
    batch = random_batch(32)
    start = agent.alpha
    for _ in range(20):
        agent.actor_update(batch)
    # a fresh policy has entropy above -2, so alpha shrinks
    assert agent.alpha < start


def test_polyak_update_exact():
    agent = SAC(SacConfig(hidden=8, tau=0.25), seed=9)
    with torch.no_grad():
        for p in agent.q1.parameters():
            p.add_(1.0)
    online = [p.clone() for p in agent.q1.parameters()]
    target = [p.clone() for p in agent.q1_target.parameters()]
    agent.soft_update()
    for o, t, new in zip(online, target, agent.q1_target.parameters()):
        assert torch.allclose(new, 0.25 * o + 0.75 * t, rtol=0, atol=1e-15)


def test_squashed_log_prob_integrates_on_slice():
    mu, log_std = T([0.3]), T([-0.4])

    def density(a):
        u = math.atanh(a)
        return math.exp(squashed_log_prob(T([u]), mu, log_std).item())

    total, _ = integrate.quad(density, -1 + 1e-12, 1 - 1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)
    # compare against the change of variables done by hand at one point
    a = 0.5
    u = math.atanh(a)
    gauss = stats.norm(0.3, math.exp(-0.4)).pdf(u)
    assert density(a) == pytest.approx(gauss / (1 - a * a), rel=1e-9)


def test_update_deterministic_given_seed():
    def run():
        agent = SAC(SacConfig(hidden=8), seed=11)
        batch = random_batch(8)
        for _ in range(5):
            agent.update(batch)
        return torch.cat([p.reshape(-1) for p in agent.actor.parameters()])

    assert torch.equal(run(), run())


# --- replay buffer --------------------------------------------------------------
def fill_episode(buf, episode, length):
    for t in range(length):
        buf.add(np.zeros(4), np.zeros(2), -1.0, np.zeros(4), t == length - 1, t, episode)


def test_single_short_episode_not_ready():
    buf = ReplayBuffer(1000)
    fill_episode(buf, 0, 20)
    buf.finalize(0, EpisodeOutcome(True, 10.0, 20))
    with pytest.raises(NotReady):
        buf.sample_ready(32, np.random.default_rng(0))


def test_unfinalized_transitions_never_sampled():
    buf = ReplayBuffer(1000)
    fill_episode(buf, 0, 20)
    fill_episode(buf, 1, 20)
    buf.finalize(0, EpisodeOutcome(True, 10.0, 20))
    fill_episode(buf, 2, 20)
    buf.finalize(2, EpisodeOutcome(False, 10.0, 20))
    rng = np.random.default_rng(0)
    idx = np.concatenate([buf.sample_ready(32, rng) for _ in range(20)])
    assert set(np.unique(buf.episode[idx]).tolist()) <= {0, 2}


def test_failed_episodes_give_task_reward_only():
    buf = ReplayBuffer(100)
    for e in range(2):
        fill_episode(buf, e, 20)
        buf.finalize(e, EpisodeOutcome(False, 1e3, 20))
    model = RewardModel("ours", ArnConfig())
    from lifespan_rl.reward import NormBounds

    batch = sample_ready_batch(buf, 32, np.random.default_rng(0), lambda r, t, o: model.batch(r, t, o, NormBounds(2e3, 1.0)))
    assert torch.equal(batch.reward, torch.full((32,), -1.0, dtype=torch.float64))


def test_sampling_uniform_chi_square():
    buf = ReplayBuffer(200)
    for e in range(5):
        fill_episode(buf, e, 20)
        buf.finalize(e, EpisodeOutcome(True, 1.0, 20))
    rng = np.random.default_rng(1)
    idx = np.concatenate([buf.sample_ready(32, rng) for _ in range(3125)])
    counts = np.bincount(idx, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.05


def test_ring_buffer_overwrites_and_prunes_outcomes():
    buf = ReplayBuffer(40)
    for e in range(3):
        fill_episode(buf, e, 20)
        buf.finalize(e, EpisodeOutcome(True, 1.0, 20))
    assert buf.size == 40
    assert set(buf.outcomes) == {1, 2}


def test_batch_actions_normalized():
    buf = ReplayBuffer(100)
    for t in range(40):
        buf.add(np.zeros(4), np.array([0.03, -0.015]), 0.0, np.zeros(4), False, t % 20, t // 20)
    buf.finalize(0, EpisodeOutcome(False, 1.0, 20))
    buf.finalize(1, EpisodeOutcome(False, 1.0, 20))
    batch = sample_ready_batch(buf, 8, np.random.default_rng(0), lambda r, t, o: r, a_max=0.03)
    assert torch.allclose(batch.act, T([[1.0, -0.5]] * 8))
