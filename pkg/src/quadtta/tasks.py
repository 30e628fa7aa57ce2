"""Language-conditioned flight tasks: episode setup, observations, reward,
termination, and the goal-distance curriculum.

Five tasks share one 32-entry observation layout and one velocity-profile
reward; they differ in goal geometry and success thresholds:

  0  "Go to the target position"        d < 1.0 m, |v| < 2.0 m/s
  1  "Avoid obstacle, reach target"     as task 0, plus never collide
  2  "Fly low and reach target"         as task 0, plus p_z < 1.0 m at success
  3  "Hover at the designated pose"     d < 0.5 m, |v| < 0.3 m/s held 50 steps
  4  "Fly through waypoints in order"   3 waypoints, each d < 1.0 m, |v| < 2.0 m/s
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .simcore import QuadState, PITCH_SINGULARITY_MARGIN

__all__ = [
    "COMMANDS",
    "N_TASKS",
    "OBS_DIM",
    "MAX_STEPS",
    "Outcome",
    "TaskSpec",
    "EpisodeState",
    "Curriculum",
    "reset_episode",
    "build_observation",
    "reward",
    "check_termination",
    "curriculum_update",
    "current_target",
    "task_onehot",
]

N_TASKS = 5
OBS_DIM = 32
MAX_STEPS = 500  # 10 s at 50 Hz

# Canonical command string per task id.
COMMANDS = (
    "Go to the target position",
    "Avoid obstacle, reach target",
    "Fly low and reach target",
    "Hover at the designated pose",
    "Fly through waypoints in order",
)

# (distance threshold [m], speed threshold [m/s]) at success.
_THRESHOLDS = {0: (1.0, 2.0), 1: (1.0, 2.0), 2: (1.0, 2.0), 3: (0.5, 0.3), 4: (1.0, 2.0)}

HOVER_HOLD_STEPS = 50  # 1 s inside tolerance before hover counts as success
BODY_RADIUS = 0.15  # collision radius of the vehicle [m]
OBSTACLE_RADIUS = 0.5
LOW_CEILING = 1.0  # task-2 altitude bound at the success instant [m]
SUCCESS_BONUS = 500.0
CRASH_PENALTY = 100.0

# Crash envelope.
_XY_LIMIT = 15.0
_Z_LIMIT = 10.0
_ATTITUDE_LIMIT = math.pi / 2.0 - PITCH_SINGULARITY_MARGIN

START_POSITION = (0.0, 0.0, 1.5)
_WAYPOINT_FRACTIONS = (0.4, 0.7, 1.0)

CURRICULUM_CAP = 7.0
CURRICULUM_STEP = 0.15
CURRICULUM_GATE = 0.25
_EMA_COEF = 2.0 / (10.0 + 1.0)  # 10-iteration EMA horizon
HOVER_START_FRACTION = 0.4  # hover curriculum starts at 40% of the nav distance


class Outcome(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass
class TaskSpec:
    """Episode geometry and success thresholds for one task instance."""

    task_id: int
    waypoints: np.ndarray  # (k, 3); k = 1 except for task 4 (k = 3)
    obstacle: tuple[np.ndarray, float] | None  # (center, radius), task 1 only
    d_succ: float
    v_succ: float
    low_ceiling: float | None = None  # task 2: p_z bound at success

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]


@dataclass
class EpisodeState:
    """Mutable per-episode bookkeeping owned by a single environment."""

    step: int = 0
    active_waypoint: int = 0
    collided: bool = False  # sticky
    hover_hold: int = 0
    prev_action: np.ndarray = field(default_factory=lambda: np.zeros(4))
    outcome: Outcome = Outcome.RUNNING


@dataclass(frozen=True)
class Curriculum:
    """Goal-distance schedule state: current radius and success-rate EMA."""

    distance: float
    sr_ema: float = 0.0

    @classmethod
    def initial(cls, task_id: int) -> "Curriculum":
        if task_id == 3:
            return cls(distance=HOVER_START_FRACTION * 2.0)
        return cls(distance=2.0)


def curriculum_update(curr: Curriculum, iteration_sr: float) -> Curriculum:
    """Fold one iteration's success rate into the EMA; grow the radius by
    0.15 m (capped at 7 m) whenever the EMA clears the 25% gate."""
    if not 0.0 <= iteration_sr <= 1.0:
        raise ValueError(f"iteration_sr must be in [0, 1], got {iteration_sr}")
    ema = curr.sr_ema + _EMA_COEF * (iteration_sr - curr.sr_ema)
    distance = curr.distance
    if ema > CURRICULUM_GATE:
        distance = min(distance + CURRICULUM_STEP, CURRICULUM_CAP)
    return Curriculum(distance=distance, sr_ema=ema)


def reset_episode(
    task_id: int, curriculum: Curriculum, rng: np.random.Generator
) -> tuple[QuadState, TaskSpec, EpisodeState]:
    """Sample a fresh episode at the curriculum's goal radius.

    Draw order (fixed for reproducibility): heading, goal altitude, then the
    task-specific jitters. Goals sit on a horizontal circle of radius
    `curriculum.distance` around the start; task 2 lowers the altitude band,
    task 1 adds a sphere at the laterally jittered segment midpoint, task 4
    bends three waypoints off the straight path.
    """
    if task_id not in range(N_TASKS):
        raise ValueError(f"task_id must be 0..4, got {task_id}")

    distance = float(curriculum.distance)
    start = np.array(START_POSITION)
    heading = rng.uniform(0.0, 2.0 * math.pi)
    alt_lo, alt_hi = (0.5, 0.9) if task_id == 2 else (1.0, 3.0)
    altitude = rng.uniform(alt_lo, alt_hi)

    along = np.array([math.cos(heading), math.sin(heading), 0.0])
    lateral = np.array([-math.sin(heading), math.cos(heading), 0.0])
    goal = np.array([distance * along[0], distance * along[1], altitude])

    obstacle = None
    if task_id == 1:
        jitter = rng.uniform(-0.5, 0.5)
        center = (start + goal) / 2.0 + jitter * lateral
        obstacle = (center, OBSTACLE_RADIUS)

    if task_id == 4:
        offsets = rng.uniform(-1.0, 1.0, size=3)
        rows = []
        for frac, off in zip(_WAYPOINT_FRACTIONS, offsets):
            base = np.array(
                [
                    frac * distance * along[0],
                    frac * distance * along[1],
                    start[2] + frac * (altitude - start[2]),
                ]
            )
            rows.append(base + off * lateral)
        waypoints = np.array(rows)
    else:
        waypoints = goal[None, :]

    d_succ, v_succ = _THRESHOLDS[task_id]
    spec = TaskSpec(
        task_id=task_id,
        waypoints=waypoints,
        obstacle=obstacle,
        d_succ=d_succ,
        v_succ=v_succ,
        low_ceiling=LOW_CEILING if task_id == 2 else None,
    )
    return QuadState.zeros(p=start), spec, EpisodeState()


def current_target(spec: TaskSpec, ep: EpisodeState) -> np.ndarray:
    return spec.waypoints[min(ep.active_waypoint, len(spec.waypoints) - 1)]


def task_onehot(task_id: int) -> np.ndarray:
    onehot = np.zeros(N_TASKS)
    onehot[task_id] = 1.0
    return onehot


def build_observation(
    state: QuadState,
    spec: TaskSpec,
    ep: EpisodeState,
    command_onehot: np.ndarray,
    max_steps: int = MAX_STEPS,
) -> np.ndarray:
    """Assemble the fixed 32-entry observation.

    Layout: [0:12] state (p, v, phi, omega); [12:15] current target minus p
    (task 4 uses the active waypoint); [15:20] command one-hot; [20:24]
    obstacle center minus p and radius (zeros when absent); [24:27] active-
    waypoint one-hot (zeros for tasks 0-3); [27:31] previous action; [31]
    normalized time remaining.
    """
    obs = np.zeros(OBS_DIM, dtype=np.float32)
    obs[0:3] = state.p
    obs[3:6] = state.v
    obs[6:9] = state.phi
    obs[9:12] = state.omega
    obs[12:15] = current_target(spec, ep) - state.p
    obs[15:20] = command_onehot
    if spec.obstacle is not None:
        center, radius = spec.obstacle
        obs[20:23] = center - state.p
        obs[23] = radius
    if spec.task_id == 4:
        obs[24 + min(ep.active_waypoint, 2)] = 1.0
    obs[27:31] = ep.prev_action
    obs[31] = 1.0 - ep.step / max_steps
    return obs


def reward(state: QuadState, u, spec: TaskSpec, ep: EpisodeState) -> float:
    """Velocity-profile tracking reward plus terminal bonuses.

    r = 2 - |v_toward - v*| - 0.05*|omega| - 0.01*|u|^2 with the profile
    v* = min(3.5, 1.5*sqrt(d)); +500 on the step the episode succeeds, -100
    on the step it crashes. Call after check_termination so `ep.outcome`
    reflects this step.
    """
    u = np.asarray(u, dtype=float).reshape(4)
    delta = current_target(spec, ep) - state.p
    d = float(np.linalg.norm(delta))
    v_star = min(3.5, 1.5 * math.sqrt(d))
    v_toward = float(state.v @ delta / d) if d >= 1e-6 else 0.0
    r = 2.0 - abs(v_toward - v_star) - 0.05 * float(np.linalg.norm(state.omega)) - 0.01 * float(u @ u)
    if ep.outcome is Outcome.SUCCESS:
        r += SUCCESS_BONUS
    elif ep.outcome is Outcome.CRASH:
        r -= CRASH_PENALTY
    return r


def check_termination(
    state: QuadState, spec: TaskSpec, ep: EpisodeState, max_steps: int = MAX_STEPS
) -> Outcome:
    """Classify the post-step state; mutates ep (waypoint advance, hover
    counter, sticky collision flag, outcome).

    Priority: crash, then success, then timeout. Crashes: ground or ceiling
    contact, leaving the 15 m horizontal envelope, attitude past the Euler
    margin, non-finite state, or (task 1) entering the obstacle's collision
    sphere inflated by the body radius.
    """
    p, v, phi = state.p, state.v, state.phi

    crashed = (
        not state.is_finite()
        or p[2] <= 0.0
        or math.hypot(p[0], p[1]) > _XY_LIMIT
        or p[2] > _Z_LIMIT
        or abs(phi[0]) >= _ATTITUDE_LIMIT
        or abs(phi[1]) >= _ATTITUDE_LIMIT
    )
    if spec.obstacle is not None and not crashed:
        center, radius = spec.obstacle
        if float(np.linalg.norm(p - center)) < radius + BODY_RADIUS:
            ep.collided = True
            crashed = True
    if crashed:
        ep.outcome = Outcome.CRASH
        return ep.outcome

    target = current_target(spec, ep)
    d = float(np.linalg.norm(target - p))
    speed = float(np.linalg.norm(v))

    if spec.task_id == 3:
        if d < spec.d_succ and speed < spec.v_succ:
            ep.hover_hold += 1
            if ep.hover_hold >= HOVER_HOLD_STEPS:
                ep.outcome = Outcome.SUCCESS
                return ep.outcome
        else:
            ep.hover_hold = 0
    elif spec.task_id == 4:
        if d < spec.d_succ and speed < spec.v_succ:
            if ep.active_waypoint >= len(spec.waypoints) - 1:
                ep.outcome = Outcome.SUCCESS
                return ep.outcome
            ep.active_waypoint += 1
    else:
        in_tolerance = d < spec.d_succ and speed < spec.v_succ
        if in_tolerance and spec.low_ceiling is not None and p[2] >= spec.low_ceiling:
            in_tolerance = False
        if in_tolerance and ep.collided:
            in_tolerance = False
        if in_tolerance:
            ep.outcome = Outcome.SUCCESS
            return ep.outcome

    if ep.step >= max_steps:
        ep.outcome = Outcome.TIMEOUT
        return ep.outcome

    ep.outcome = Outcome.RUNNING
    return ep.outcome
