"""scikit-learn style front end for training and querying a braking controller."""
from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import ddpg, harness, nn
from . import env as sim
from ._validation import check_state_batch

_HYPER_NAMES = {f.name for f in fields(ddpg.DdpgHyper)}


class DDPGBrakeController(BaseEstimator):
    """Learn a continuous brake/throttle policy for one of the two scenarios.

    ``fit`` trains in the simulator (it takes no data), ``predict`` maps raw
    40-value observation histories to actions in [-1, 1] where negative values
    brake and positive values accelerate.

    Parameters left as ``None`` fall back to the scenario/agent defaults.
    """

    def __init__(self, scenario=1, episodes=2000, random_state=0, v_agent_range=None,
                 v_object_range=None, discount_gamma=0.99, tau=0.001, actor_lr=5e-5,
                 critic_lr=5e-4, buffer_capacity=20000, minibatch_size=16,
                 warmup_transitions=500, position_scale=60.0, velocity_scale=30.0,
                 eval_every=0, eval_episodes=20, output_dir=None):
        self.scenario = scenario
        self.episodes = episodes
        self.random_state = random_state
        self.v_agent_range = v_agent_range
        self.v_object_range = v_object_range
        self.discount_gamma = discount_gamma
        self.tau = tau
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.buffer_capacity = buffer_capacity
        self.minibatch_size = minibatch_size
        self.warmup_transitions = warmup_transitions
        self.position_scale = position_scale
        self.velocity_scale = velocity_scale
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.output_dir = output_dir

    def _run_config(self):
        params = self.get_params()
        overrides = {}
        if self.v_agent_range is not None:
            overrides["v_agent_range"] = tuple(self.v_agent_range)
        if self.v_object_range is not None:
            overrides["v_object_range"] = tuple(self.v_object_range)
        hyper = ddpg.DdpgHyper(**{k: v for k, v in params.items() if k in _HYPER_NAMES})
        return harness.RunConfig(
            scenario=self.scenario,
            episodes=self.episodes,
            seed=self.random_state,
            eval_every=self.eval_every,
            eval_episodes=self.eval_episodes,
            output_dir=self.output_dir,
            scenario_config=sim.ScenarioConfig.for_scenario(self.scenario, **overrides),
            hyper=hyper,
            position_scale=self.position_scale,
            velocity_scale=self.velocity_scale,
        )

    def fit(self, X=None, y=None):
        """Train from scratch. ``X`` and ``y`` are ignored."""
        config = self._run_config()
        summary = harness.run_training(config)
        self.run_config_ = config
        self.agent_ = summary.agent
        self.scaler_ = config.make_scaler()
        self.episode_records_ = summary.records
        self.returns_ = np.array([r.accumulated_reward for r in summary.records])
        self.n_features_in_ = self.agent_.state_size
        return self

    def predict(self, X):
        """Deterministic actions for raw (unscaled) observation histories."""
        check_is_fitted(self, "agent_")
        X = check_state_batch(X, self.n_features_in_)
        return nn.forward(self.agent_.actor, self.scaler_.transform(X))[:, 0]

    def evaluate(self, episodes=None, seed=None):
        check_is_fitted(self, "agent_")
        rng = None if seed is None else np.random.default_rng(seed)
        return harness.run_eval(self.agent_, self.run_config_, episodes=episodes, rng=rng)

    def score(self, X=None, y=None):
        """Mean exploration-free return over ``eval_episodes`` simulated episodes."""
        return self.evaluate().mean_return
