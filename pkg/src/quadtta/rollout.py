"""Single environment instance: simulator state, task episode, action delay,
and the adaptation latent, advanced one control cycle at a time.

Each instance is owned by exactly one worker. The policy/value/encoder
forward passes live with the caller (trainer or evaluation harness), which
batches them across instances; this class only owns the per-step episode
mechanics and the replay bookkeeping the PPO update needs (the latent base
and the transition that produced the current latent).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import simcore, tasks
from .simcore import DelayBuffer, MismatchConfig, PhysicalParams, QuadState
from .tasks import Curriculum, EpisodeState, Outcome, TaskSpec
from .tta import CLAMP_BOUND

__all__ = ["StepResult", "EpisodeRunner"]


@dataclass
class StepResult:
    reward: float
    done: bool
    outcome: Outcome
    x_prev: np.ndarray  # 12-dim state before the step (float32)
    x_next: np.ndarray  # 12-dim state after the step (float32)
    u_cmd: np.ndarray  # clamped commanded action actually issued


class EpisodeRunner:
    """State machine for one environment."""

    def __init__(
        self,
        task_id: int,
        params: PhysicalParams = simcore.DEFAULT_PARAMS,
        max_steps: int = tasks.MAX_STEPS,
        latent_dim: int = 32,
        alpha: float = 0.1,
    ):
        self.task_id = task_id
        self.params = params
        self.max_steps = max_steps
        self.latent_dim = latent_dim
        self.alpha = alpha
        self.onehot = tasks.task_onehot(task_id).astype(np.float32)

        self.state: QuadState | None = None
        self.spec: TaskSpec | None = None
        self.ep: EpisodeState | None = None
        self.mismatch: MismatchConfig = simcore.NOMINAL
        self.delay: DelayBuffer | None = None

        # Adaptation latent plus what the PPO update needs to rebuild it:
        # z = z_base + alpha * f(trans) for steps that have a producing
        # transition; the first step of an episode has none.
        self.z = np.zeros(latent_dim, dtype=np.float32)
        self.replay_z_base = np.zeros(latent_dim, dtype=np.float32)
        self.replay_trans = np.zeros(2 * 12 + 4, dtype=np.float32)
        self.replay_has = False

    def reset(self, curriculum: Curriculum, mismatch: MismatchConfig, rng: np.random.Generator) -> None:
        self.state, self.spec, self.ep = tasks.reset_episode(self.task_id, curriculum, rng)
        self.mismatch = mismatch
        self.delay = DelayBuffer(mismatch.delay_steps, self.params.hover_action())
        self.z[:] = 0.0
        self.replay_z_base[:] = 0.0
        self.replay_trans[:] = 0.0
        self.replay_has = False

    def observe(self) -> np.ndarray:
        return tasks.build_observation(self.state, self.spec, self.ep, self.onehot, self.max_steps)

    def state_vector(self) -> np.ndarray:
        return self.state.as_vector().astype(np.float32)

    def step(self, u_cmd) -> StepResult:
        """Apply one commanded action: delay, dynamics, termination, reward."""
        u_cmd = simcore.clamp_action(u_cmd)
        x_prev = self.state_vector()
        u_applied = self.delay.apply(u_cmd)
        self.state = simcore.step(self.state, u_applied, self.params, self.mismatch)
        self.ep.step += 1
        outcome = tasks.check_termination(self.state, self.spec, self.ep, self.max_steps)
        r = tasks.reward(self.state, u_cmd, self.spec, self.ep)
        self.ep.prev_action = u_cmd.astype(np.float32)
        return StepResult(
            reward=r,
            done=outcome is not Outcome.RUNNING,
            outcome=outcome,
            x_prev=x_prev,
            x_next=self.state_vector(),
            u_cmd=u_cmd.astype(np.float32),
        )

    def advance_latent(self, delta: np.ndarray, trans: np.ndarray) -> None:
        """Fold one precomputed latent increment in; record replay context."""
        self.replay_z_base[:] = self.z
        self.replay_trans[:] = trans
        self.replay_has = True
        self.z = np.clip(self.z + self.alpha * delta, -CLAMP_BOUND, CLAMP_BOUND).astype(np.float32)
