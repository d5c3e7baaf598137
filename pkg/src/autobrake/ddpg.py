"""DDPG agent: actor/critic pair, lagged target copies, OU exploration and replay."""
import json
import math
import os
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import nn
from ._validation import check_positive
from .exceptions import ConfigurationError, NumericError, ParseError

CHECKPOINT_MAGIC = "autobrake-agent 1"


@dataclass(frozen=True)
class DdpgHyper:
    discount_gamma: float = 0.99
    tau: float = 0.001
    actor_lr: float = 0.00005
    critic_lr: float = 0.0005
    buffer_capacity: int = 20000
    minibatch_size: int = 16
    warmup_transitions: int = 500
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    ou_mu: float = 0.0
    ou_dt: float = 1.0
    leaky_slope: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError(f"tau must lie in (0, 1), got {self.tau}")
        if not 0.0 < self.discount_gamma < 1.0:
            raise ConfigurationError(f"discount_gamma must lie in (0, 1), got {self.discount_gamma}")
        check_positive(self.actor_lr, "actor_lr")
        check_positive(self.critic_lr, "critic_lr")
        for name in ("buffer_capacity", "minibatch_size", "warmup_transitions"):
            check_positive(getattr(self, name), name, integer=True)
        if self.minibatch_size > self.buffer_capacity:
            raise ConfigurationError("minibatch_size cannot exceed buffer_capacity")


class Transition(NamedTuple):
    state: np.ndarray
    action: float
    reward: float
    next_state: np.ndarray
    terminal: bool


class Batch(NamedTuple):
    states: np.ndarray       # (n, state_size)
    actions: np.ndarray      # (n, 1)
    rewards: np.ndarray      # (n,)
    next_states: np.ndarray  # (n, state_size)
    terminals: np.ndarray    # (n,) bool

    @classmethod
    def from_transitions(cls, transitions):
        return cls(
            np.array([t.state for t in transitions], dtype=np.float64),
            np.array([[t.action] for t in transitions], dtype=np.float64),
            np.array([t.reward for t in transitions], dtype=np.float64),
            np.array([t.next_state for t in transitions], dtype=np.float64),
            np.array([t.terminal for t in transitions], dtype=bool),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO store; the oldest transition is overwritten when full."""

    def __init__(self, capacity, state_size=40):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, state_size))
        self.actions = np.zeros((self.capacity, 1))
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, state_size))
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, transition):
        i = self._next
        self.states[i] = transition.state
        self.actions[i, 0] = transition.action
        self.rewards[i] = transition.reward
        self.next_states[i] = transition.next_state
        self.terminals[i] = transition.terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _gather(self, idx):
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx],
                     self.next_states[idx], self.terminals[idx])

    def sample_indices(self, rng, n):
        return rng.integers(0, self.size, size=n)

    def sample(self, rng, n):
        """Uniform draw with replacement over the current contents."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self._gather(self.sample_indices(rng, n))

    def contents(self):
        """Everything stored, oldest first."""
        start = self._next if self.size == self.capacity else 0
        idx = (start + np.arange(self.size)) % self.capacity
        return self._gather(idx)


class OUNoise:
    """Ornstein-Uhlenbeck process, Euler-Maruyama discretised."""

    def __init__(self, theta=0.15, sigma=0.2, mu=0.0, dt=1.0):
        self.theta, self.sigma, self.mu, self.dt = theta, sigma, mu, dt
        self.value = mu

    def reset(self):
        self.value = self.mu

    def sample(self, rng):
        z = rng.standard_normal()
        self.value = (self.value + self.theta * (self.mu - self.value) * self.dt
                      + self.sigma * math.sqrt(self.dt) * z)
        return self.value


def ou_sample(noise, rng):
    return noise.sample(rng)


class Agent:
    """Networks, optimisers, replay buffer and noise for one training run."""

    def __init__(self, actor, critic, hyper=None, target_actor=None, target_critic=None):
        self.hyper = hyper if hyper is not None else DdpgHyper()
        h = self.hyper
        if actor.layer_sizes[-1] != 1 or critic.layer_sizes[0] != actor.layer_sizes[0] + 1:
            raise ConfigurationError(
                f"critic input must be state + action: actor {actor.layer_sizes}, "
                f"critic {critic.layer_sizes}")
        self.actor = actor
        self.critic = critic
        self.target_actor = target_actor if target_actor is not None else actor.copy()
        self.target_critic = target_critic if target_critic is not None else critic.copy()
        self.actor_opt = nn.AdamState.for_params(actor, h.actor_lr)
        self.critic_opt = nn.AdamState.for_params(critic, h.critic_lr)
        self.buffer = ReplayBuffer(h.buffer_capacity, actor.layer_sizes[0])
        self.noise = OUNoise(h.ou_theta, h.ou_sigma, h.ou_mu, h.ou_dt)
        self._actor_grads = nn.Gradients.zeros_like(actor)
        self._critic_grads = nn.Gradients.zeros_like(critic)

    @classmethod
    def create(cls, rng, hyper=None, actor_layers=nn.ACTOR_LAYERS, critic_layers=nn.CRITIC_LAYERS):
        hyper = hyper if hyper is not None else DdpgHyper()
        actor = nn.init_params(actor_layers, rng, hyper.leaky_slope, nn.Activation.TANH)
        critic = nn.init_params(critic_layers, rng, hyper.leaky_slope, nn.Activation.IDENTITY)
        return cls(actor, critic, hyper)

    @property
    def state_size(self):
        return self.actor.layer_sizes[0]


def _critic_input(states, actions):
    return np.concatenate([states, actions], axis=1)


def act(agent, state, explore=False, rng=None):
    """Actor output for one state, optionally with OU noise; always within [-1, 1]."""
    a = float(nn.forward(agent.actor, state)[0])
    if explore:
        a += agent.noise.sample(rng)
    return min(max(a, -1.0), 1.0)


def compute_target(agent, batch):
    """Bootstrapped critic targets; terminal rows never touch the target networks."""
    y = np.array(batch.rewards, dtype=np.float64)
    live = ~np.asarray(batch.terminals, dtype=bool)
    if live.any():
        nxt = batch.next_states[live]
        a_next = nn.forward(agent.target_actor, nxt)
        q_next = nn.forward(agent.target_critic, _critic_input(nxt, a_next))[:, 0]
        y[live] += agent.hyper.discount_gamma * q_next
    return y


def critic_update(agent, batch):
    """One Adam step on the mean squared TD error. Returns the loss before the step."""
    y = compute_target(agent, batch)
    x = _critic_input(batch.states, batch.actions)
    q, cache = nn.forward_cache(agent.critic, x)
    diff = q[:, 0] - y
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise NumericError(f"critic loss is {loss}; targets range "
                           f"[{np.nanmin(y)}, {np.nanmax(y)}]")
    grads, _ = nn.backward(agent.critic, x, (2.0 / len(y)) * diff[:, None], cache,
                           out=agent._critic_grads)
    nn.adam_step_inplace(agent.critic, grads, agent.critic_opt)
    return loss


def policy_gradient(agent, states):
    """Gradient of ``-mean Q(s, actor(s))`` w.r.t. the actor, plus the mean Q value.

    The critic is differentiated only with respect to its action input.
    """
    a, actor_cache = nn.forward_cache(agent.actor, states)
    x = _critic_input(states, a)
    q, critic_cache = nn.forward_cache(agent.critic, x)
    n = len(states)
    _, dx = nn.backward(agent.critic, x, np.full((n, 1), -1.0 / n), critic_cache,
                        param_grads=False)
    grads, _ = nn.backward(agent.actor, states, dx[:, -1:], actor_cache, out=agent._actor_grads)
    return grads, float(np.mean(q))


def actor_update(agent, batch):
    """One Adam ascent step on mean Q(s, actor(s)). Returns the objective before the step."""
    grads, objective = policy_gradient(agent, batch.states)
    if not math.isfinite(objective):
        raise NumericError(f"actor objective is {objective}")
    nn.adam_step_inplace(agent.actor, grads, agent.actor_opt)
    return objective


def soft_update(target, source, tau):
    """Move ``target`` a fraction ``tau`` toward ``source``; returns new params."""
    target.check_congruent(source)
    return target.with_vector(nn.blend(target.vector, source.vector, tau))


def soft_update_inplace(target, source, tau):
    target.check_congruent(source)
    nn.blend(target.vector, source.vector, tau, out=target.vector)


def learn_step(agent, rng):
    """Sample a minibatch and update critic, actor and both targets.

    Returns ``None`` until the buffer holds ``warmup_transitions`` entries.
    """
    h = agent.hyper
    if len(agent.buffer) < max(h.warmup_transitions, h.minibatch_size):
        return None
    batch = agent.buffer.sample(rng, h.minibatch_size)
    loss = critic_update(agent, batch)
    objective = actor_update(agent, batch)
    soft_update_inplace(agent.target_critic, agent.critic, h.tau)
    soft_update_inplace(agent.target_actor, agent.actor, h.tau)
    return loss, objective


# -- agent checkpoints -----------------------------------------------------

_BLOCKS = ("actor", "critic", "target_actor", "target_critic")


def save_agent(agent, target, meta=None, rng=None):
    """Write hyperparameters, noise/RNG state, ``meta`` and the four networks as text."""
    if isinstance(target, (str, os.PathLike)):
        with open(target, "w") as fh:
            return save_agent(agent, fh, meta, rng)
    noise = {"value": agent.noise.value}
    rng_state = rng.bit_generator.state if rng is not None else None
    target.write(CHECKPOINT_MAGIC + "\n")
    target.write("hyper: " + json.dumps(asdict(agent.hyper), sort_keys=True) + "\n")
    target.write("noise: " + json.dumps(noise) + "\n")
    target.write("rng: " + json.dumps(rng_state, sort_keys=True) + "\n")
    target.write("meta: " + json.dumps(meta or {}, sort_keys=True) + "\n")
    for name in _BLOCKS:
        target.write(f"[{name}]\n")
        nn.write_params(getattr(agent, name), target)


def _json_line(reader, key):
    start, line = reader.next_line(key)
    prefix = key + ": "
    if not line.startswith(prefix):
        raise ParseError(f"expected '{prefix}' line", start)
    try:
        return json.loads(line[len(prefix):])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad JSON in {key}: {exc.msg}", start + len(prefix) + exc.pos) from None


def load_agent(source):
    """Read a checkpoint from :func:`save_agent`.

    Returns ``(agent, meta, rng)``; ``rng`` is ``None`` when no state was saved.
    Adam moments are not stored, so optimisers restart from zero.
    """
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            return load_agent(fh)
    reader = nn._LineReader(source)
    start, magic = reader.next_line("magic")
    if magic != CHECKPOINT_MAGIC:
        raise ParseError(f"not an agent checkpoint (got {magic[:40]!r})", start)
    hyper_fields = {f.name for f in fields(DdpgHyper)}
    raw_hyper = _json_line(reader, "hyper")
    hyper = DdpgHyper(**{k: v for k, v in raw_hyper.items() if k in hyper_fields})
    noise = _json_line(reader, "noise")
    rng_state = _json_line(reader, "rng")
    meta = _json_line(reader, "meta")
    nets = {}
    for name in _BLOCKS:
        start, label = reader.next_line(f"{name} label")
        if label != f"[{name}]":
            raise ParseError(f"expected [{name}] block, got {label[:40]!r}", start)
        is_actor = "actor" in name
        nets[name] = nn.read_params(
            reader,
            leaky_slope=hyper.leaky_slope,
            output_activation=nn.Activation.TANH if is_actor else nn.Activation.IDENTITY,
        )
    agent = Agent(nets["actor"], nets["critic"], hyper,
                  nets["target_actor"], nets["target_critic"])
    agent.noise.value = float(noise["value"])
    rng = None
    if rng_state is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = rng_state
    return agent, meta, rng
