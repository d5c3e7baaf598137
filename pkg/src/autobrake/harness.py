"""Training/evaluation loops, CSV exports and run-level checkpoints.

Random numbers for a run come from one generator seeded with ``RunConfig.seed``.
Draws happen in a fixed order: network initialisation, then per episode the
initial speeds, then per step the exploration noise followed by the replay
minibatch indices. Periodic evaluations use their own generator derived from
the same seed so every evaluation sees the same set of initial speeds.
"""
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import ddpg
from . import env as sim
from ._validation import check_positive
from .exceptions import ConfigurationError, NumericError
from .preprocessing import StateScaler

logger = logging.getLogger(__name__)

EPISODE_HEADER = ["episode", "return", "outcome", "steps", "v0_agent", "v0_obj"]
TRAJECTORY_HEADER = ["t", "x", "y", "v", "action", "reward", "outcome"]


@dataclass(frozen=True)
class RunConfig:
    scenario: sim.Scenario = sim.Scenario.STATIC_OBSTACLE
    episodes: int = 2000
    seed: int = 0
    eval_every: int = 50
    eval_episodes: int = 20
    output_dir: Optional[Path] = None
    scenario_config: sim.ScenarioConfig = None
    weights: sim.RewardWeights = None
    hyper: ddpg.DdpgHyper = field(default_factory=ddpg.DdpgHyper)
    position_scale: float = 60.0
    velocity_scale: float = 30.0
    command: str = "train"
    checkpoint: Optional[Path] = None
    write_checkpoints: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scenario", sim.Scenario(self.scenario))
        check_positive(self.episodes, "episodes", integer=True)
        check_positive(self.eval_episodes, "eval_episodes", integer=True)
        if self.eval_every < 0:
            raise ConfigurationError("eval_every must be >= 0 (0 disables evaluation)")
        if self.scenario_config is None:
            object.__setattr__(self, "scenario_config",
                               sim.ScenarioConfig.for_scenario(self.scenario))
        if self.weights is None:
            object.__setattr__(self, "weights", sim.RewardWeights.for_scenario(self.scenario))
        if self.scenario_config.scenario_id is not self.scenario:
            raise ConfigurationError("scenario_config does not match scenario")
        if self.output_dir is not None:
            object.__setattr__(self, "output_dir", Path(self.output_dir))

    @classmethod
    def from_overrides(cls, scenario, values=None, **kwargs):
        """Build a config from ``key = value`` strings covering every nested settings object."""
        values = dict(values or {})
        run_fields = {"position_scale", "velocity_scale", "eval_every", "eval_episodes"}
        scenario_config = sim.apply_overrides(sim.ScenarioConfig.for_scenario(scenario), values)
        weights = sim.apply_overrides(sim.RewardWeights.for_scenario(scenario), values)
        hyper = sim.apply_overrides(ddpg.DdpgHyper(), values)
        known = ({f.name for f in fields(sim.ScenarioConfig)} | {f.name for f in fields(sim.RewardWeights)}
                 | {f.name for f in fields(ddpg.DdpgHyper)} | run_fields)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        for name in run_fields & set(values):
            kwargs.setdefault(name, (float if "scale" in name else int)(values[name]))
        if scenario_config.scenario_id is not sim.Scenario(scenario):
            raise ConfigurationError("scenario_id in config file disagrees with --scenario")
        return cls(scenario=scenario, scenario_config=scenario_config, weights=weights,
                   hyper=hyper, **kwargs)

    def make_scaler(self):
        return StateScaler(self.position_scale, self.velocity_scale).fit()

    def to_meta(self):
        sc = asdict(self.scenario_config)
        sc["scenario_id"] = int(self.scenario_config.scenario_id)
        return {
            "scenario": int(self.scenario),
            "seed": self.seed,
            "episodes": self.episodes,
            "eval_every": self.eval_every,
            "eval_episodes": self.eval_episodes,
            "scenario_config": sc,
            "weights": asdict(self.weights),
            "position_scale": self.position_scale,
            "velocity_scale": self.velocity_scale,
        }

    @classmethod
    def from_meta(cls, meta, hyper=None, **kwargs):
        sc = dict(meta["scenario_config"])
        for key, value in sc.items():
            if isinstance(value, list):
                sc[key] = tuple(value)
        run = {key: meta[key] for key in ("seed", "episodes", "eval_every", "eval_episodes")
               if key in meta}
        run.update(kwargs)
        return cls(
            scenario=meta["scenario"],
            scenario_config=sim.ScenarioConfig(**sc),
            weights=sim.RewardWeights(**meta["weights"]),
            hyper=hyper if hyper is not None else ddpg.DdpgHyper(),
            position_scale=meta["position_scale"],
            velocity_scale=meta["velocity_scale"],
            **run,
        )


@dataclass
class EpisodeRecord:
    episode: int
    accumulated_reward: float
    outcome: sim.EpisodeOutcome
    steps: int
    v0_agent: float
    v0_object: float
    min_distance: float = math.inf

    def row(self):
        return [self.episode, repr(self.accumulated_reward), self.outcome.value, self.steps,
                repr(self.v0_agent), repr(self.v0_object)]


@dataclass
class TrajectoryRow:
    t: float
    x: float
    y: float
    v: float
    action: float
    reward: float
    outcome: sim.EpisodeOutcome

    def row(self):
        return [repr(self.t), repr(self.x), repr(self.y), repr(self.v), repr(self.action),
                repr(self.reward), self.outcome.value]


@dataclass
class EvalStats:
    episodes: int
    collision_rate: float
    early_stop_rate: float
    high_speed_rate: float
    time_limit_rate: float
    mean_return: float
    mean_min_distance: float
    records: List[EpisodeRecord] = field(default_factory=list, repr=False)
    trajectory: List[TrajectoryRow] = field(default_factory=list, repr=False)

    def summary(self):
        return {k: v for k, v in asdict(self).items() if k not in ("records", "trajectory")}


@dataclass
class TrainingSummary:
    agent: ddpg.Agent
    records: List[EpisodeRecord]
    evaluations: list
    final_eval: Optional[EvalStats]
    paths: dict


def run_episode(agent, config, scaler, rng, episode=0, explore=False, learn=False,
                record_trajectory=False, policy=None):
    """Play one episode. Returns ``(EpisodeRecord, trajectory rows)``.

    ``policy(world, history)`` replaces the actor when given; it sees raw,
    unscaled observations and must return an action in [-1, 1].
    """
    cfg = config.scenario_config
    world, history = sim.reset(cfg, rng)
    if agent is not None:
        agent.noise.reset()
    state = scaler.transform(history)
    record = EpisodeRecord(episode, 0.0, sim.EpisodeOutcome.RUNNING, 0, world.agent_vel,
                           world.object_vel, math.sqrt(sim.compute_distance_sq(world)))
    trajectory = []
    while True:
        if policy is None:
            action = ddpg.act(agent, state, explore=explore, rng=rng)
        else:
            action = float(policy(world, history))
        result = sim.step(world, history, action, cfg, config.weights)
        next_state = scaler.transform(result.next_state)
        if learn:
            agent.buffer.add(ddpg.Transition(state, action, result.reward, next_state,
                                             result.terminal))
            ddpg.learn_step(agent, rng)
        world, history, state = result.world, result.next_state, next_state
        record.accumulated_reward += result.reward
        record.steps += 1
        record.min_distance = min(record.min_distance, math.sqrt(sim.compute_distance_sq(world)))
        if record_trajectory:
            trajectory.append(TrajectoryRow(world.time, world.agent_pos[0], world.agent_pos[1],
                                            world.agent_vel, action, result.reward,
                                            result.outcome))
        if result.done:
            record.outcome = world.done
            return record, trajectory


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_trajectory(path, trajectory):
    write_csv(path, TRAJECTORY_HEADER, (r.row() for r in trajectory))


def run_eval(agent, config, episodes=None, rng=None, out_dir=None, tag=0, policy=None,
             export_all=False):
    """Evaluate with exploration off.

    Outcome rates cover every way an episode can end and sum to one. When
    ``out_dir`` is given, the first episode's trajectory goes to
    ``trajectory_<tag>.csv``; with ``export_all`` every episode ``i`` is
    written to ``trajectory_<i>.csv`` instead. ``policy`` is passed through
    to :func:`run_episode`.
    """
    episodes = config.eval_episodes if episodes is None else episodes
    check_positive(episodes, "episodes", integer=True)
    rng = rng if rng is not None else np.random.default_rng([config.seed, 1])
    scaler = config.make_scaler()
    records, first_trajectory = [], []
    for i in range(episodes):
        keep = i == 0 or (export_all and out_dir is not None)
        record, trajectory = run_episode(agent, config, scaler, rng, episode=i,
                                         record_trajectory=keep, policy=policy)
        records.append(record)
        if i == 0:
            first_trajectory = trajectory
        if export_all and out_dir is not None:
            write_trajectory(Path(out_dir) / f"trajectory_{i}.csv", trajectory)
    if out_dir is not None and not export_all:
        write_trajectory(Path(out_dir) / f"trajectory_{tag}.csv", first_trajectory)
    outcomes = [r.outcome for r in records]
    rate = lambda o: outcomes.count(o) / episodes
    return EvalStats(
        episodes=episodes,
        collision_rate=rate(sim.EpisodeOutcome.COLLISION),
        early_stop_rate=rate(sim.EpisodeOutcome.EARLY_STOP),
        high_speed_rate=rate(sim.EpisodeOutcome.HIGH_SPEED),
        time_limit_rate=rate(sim.EpisodeOutcome.TIME_LIMIT),
        mean_return=float(np.mean([r.accumulated_reward for r in records])),
        mean_min_distance=float(np.mean([r.min_distance for r in records])),
        records=records,
        trajectory=first_trajectory,
    )


def velocity_valley(speeds, v0, dip=0.5, recovery=0.7):
    """True when speed falls below ``dip * v0`` and then regains more than
    ``recovery`` of the lost speed before the trace ends."""
    speeds = np.asarray(speeds, dtype=np.float64)
    if speeds.size == 0:
        return False
    i = int(np.argmin(speeds))
    low = speeds[i]
    if low >= dip * v0:
        return False
    return bool(speeds[i:].max() - low > recovery * (v0 - low))


def save_run_checkpoint(agent, config, path, rng=None):
    ddpg.save_agent(agent, path, meta=config.to_meta(), rng=rng)
    return Path(path)


def load_run_checkpoint(path, **overrides):
    """Load an agent checkpoint together with the run settings stored in it."""
    agent, meta, rng = ddpg.load_agent(path)
    config = RunConfig.from_meta(meta, hyper=agent.hyper, **overrides)
    return agent, config, rng


def run_training(config, agent=None):
    """Train for ``config.episodes`` episodes, logging and evaluating along the way."""
    rng = np.random.default_rng(config.seed)
    if agent is None:
        agent = ddpg.Agent.create(rng, config.hyper)
    scaler = config.make_scaler()
    out = config.output_dir
    paths = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        paths["episodes"] = out / "episodes.csv"
        log_fh = open(paths["episodes"], "w", newline="")
        log = csv.writer(log_fh, lineterminator="\n")
        log.writerow(EPISODE_HEADER)
    records, evaluations = [], []
    best = -math.inf
    final_eval = None
    try:
        for episode in range(config.episodes):
            record, _ = run_episode(agent, config, scaler, rng, episode=episode,
                                    explore=True, learn=True)
            records.append(record)
            if out is not None:
                log.writerow(record.row())
                log_fh.flush()
            done = episode + 1
            if config.eval_every and (done % config.eval_every == 0 or done == config.episodes):
                final_eval = run_eval(agent, config, out_dir=out, tag=done)
                evaluations.append((done, final_eval))
                logger.info("episode %d: eval return %.2f, collisions %.0f%%", done,
                            final_eval.mean_return, 100 * final_eval.collision_rate)
                if out is not None and config.write_checkpoints and final_eval.mean_return > best:
                    best = final_eval.mean_return
                    paths["best"] = save_run_checkpoint(agent, config, out / "best.ckpt", rng)
    except NumericError as exc:
        if out is not None:
            (out / "FAILED").write_text(f"episode {len(records)}: {exc}\n")
        raise
    finally:
        if out is not None:
            log_fh.close()
    if out is not None and config.write_checkpoints:
        paths["final"] = save_run_checkpoint(agent, config, out / "final.ckpt", rng)
    return TrainingSummary(agent, records, evaluations, final_eval, paths)


def with_velocity_range(config, v_agent_range, v_object_range=None):
    """Copy of ``config`` with narrowed initial-speed ranges."""
    updates = {"v_agent_range": v_agent_range}
    if v_object_range is not None:
        updates["v_object_range"] = v_object_range
    return replace(config, scenario_config=replace(config.scenario_config, **updates))
