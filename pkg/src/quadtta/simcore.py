"""Rigid-body quadrotor simulator with collective-thrust / body-rate commands.

Semi-implicit Euler integration at 50 Hz. Translational forces: rotor thrust
along the body z axis, gravity, linear aerodynamic drag, and an optional
constant world-frame wind force. The rotational side tracks commanded body
rates through a proportional torque loop with saturation.

Deployment-vs-training differences (mass and drag scaling, command delay,
wind) enter exclusively through `MismatchConfig`; `step` itself is a pure
function of its arguments, so environment instances can be stepped from any
number of workers as long as each owns its own state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from collections import deque

import numpy as np

__all__ = [
    "PhysicalParams",
    "MismatchConfig",
    "QuadState",
    "DelayBuffer",
    "DrRanges",
    "UnknownConditionError",
    "clamp_action",
    "map_action",
    "rotation_matrix",
    "euler_rates",
    "wrap_yaw",
    "step",
    "mismatch_condition",
    "sample_dr",
    "CONDITION_NAMES",
    "ID_CONDITIONS",
    "OOD_CONDITIONS",
    "DR_PRESETS",
]

# Pitch closer than this to +-pi/2 makes the Euler-rate map singular; the
# episode layer terminates with a Crash before the map is ever evaluated there.
PITCH_SINGULARITY_MARGIN = 1e-3


def _vec3(x) -> np.ndarray:
    return np.asarray(x, dtype=float).reshape(3).copy()


@dataclass(frozen=True)
class PhysicalParams:
    """Nominal airframe constants (1 kg research-quadrotor scale).

    f_max defaults to 1.5 * m0 * |g|, which makes a +50% mass perturbation
    exactly hover-infeasible while +40% keeps a small thrust margin.
    """

    m0: float = 1.0  # nominal mass [kg]
    g: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    inertia: np.ndarray = field(default_factory=lambda: np.array([0.01, 0.01, 0.02]))
    cd0: float = 0.1  # nominal linear drag coefficient [N s/m]
    f_max: float = 0.0  # max collective thrust [N]; 0 means "use 1.5*m0*|g|"
    omega_max: float = 3.0  # body-rate command limit [rad/s]
    k_omega: float = 20.0  # rate-tracking gain [1/s]
    tau_max: float = 0.5  # torque limit [N m]
    dt: float = 0.02  # integration step [s] (50 Hz)

    def __post_init__(self):
        object.__setattr__(self, "g", _vec3(self.g))
        object.__setattr__(self, "inertia", _vec3(self.inertia))
        if self.f_max == 0.0:
            object.__setattr__(self, "f_max", 1.5 * self.m0 * self.g_mag)
        if self.m0 <= 0.0:
            raise ValueError(f"m0 must be positive, got {self.m0}")
        if self.f_max <= self.m0 * self.g_mag:
            raise ValueError("f_max must exceed nominal hover thrust m0*|g|")
        if self.dt != 0.02:
            raise ValueError(f"dt is fixed at 0.02 s (50 Hz), got {self.dt}")

    @property
    def g_mag(self) -> float:
        return float(np.linalg.norm(self.g))

    def hover_thrust(self, mass_scale: float = 1.0) -> float:
        """Thrust [N] that balances gravity at the given mass scale."""
        return mass_scale * self.m0 * self.g_mag

    def hover_action(self) -> np.ndarray:
        """Neutral command: nominal-mass hover thrust, zero rate commands."""
        u1 = 2.0 * self.hover_thrust() / self.f_max - 1.0
        return np.array([u1, 0.0, 0.0, 0.0])


DEFAULT_PARAMS = PhysicalParams()


@dataclass(frozen=True)
class MismatchConfig:
    """Deployment dynamics relative to nominal: scales, delay, wind force [N]."""

    mass_scale: float = 1.0
    drag_scale: float = 1.0
    delay_steps: int = 0
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "wind", _vec3(self.wind))
        if self.mass_scale < 0.0 or self.drag_scale < 0.0:
            raise ValueError("mass_scale and drag_scale must be >= 0")
        if self.delay_steps < 0 or int(self.delay_steps) != self.delay_steps:
            raise ValueError("delay_steps must be a nonnegative integer")
        object.__setattr__(self, "delay_steps", int(self.delay_steps))


NOMINAL = MismatchConfig()


@dataclass
class QuadState:
    """12-dim rigid-body state: position, velocity, ZYX Euler angles, body rates."""

    p: np.ndarray
    v: np.ndarray
    phi: np.ndarray  # [roll, pitch, yaw] [rad]
    omega: np.ndarray  # body rates [rad/s]

    def __post_init__(self):
        self.p = _vec3(self.p)
        self.v = _vec3(self.v)
        self.phi = _vec3(self.phi)
        self.omega = _vec3(self.omega)

    @classmethod
    def zeros(cls, p=(0.0, 0.0, 0.0)) -> "QuadState":
        return cls(p=_vec3(p), v=np.zeros(3), phi=np.zeros(3), omega=np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.phi, self.omega])

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.p).all()
            and np.isfinite(self.v).all()
            and np.isfinite(self.phi).all()
            and np.isfinite(self.omega).all()
        )


class DelayBuffer:
    """FIFO command delay of k control cycles.

    While the queue is still filling (the first k steps of an episode) the
    applied command is the hover-neutral action, so episodes do not start
    with an arbitrary zero-thrust drop.
    """

    def __init__(self, delay_steps: int, neutral: np.ndarray):
        if delay_steps < 0:
            raise ValueError("delay_steps must be >= 0")
        self.delay_steps = int(delay_steps)
        self.neutral = np.asarray(neutral, dtype=float).copy()
        self._fifo: deque = deque()

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Queue the new command; return the one to execute this cycle."""
        self._fifo.append(np.asarray(u, dtype=float).copy())
        if len(self._fifo) > self.delay_steps:
            return self._fifo.popleft()
        return self.neutral.copy()

    def reset(self) -> None:
        self._fifo.clear()

    def __len__(self) -> int:
        return len(self._fifo)


def clamp_action(u) -> np.ndarray:
    """Clamp every command component into [-1, 1] (makes map_action total)."""
    return np.clip(np.asarray(u, dtype=float).reshape(4), -1.0, 1.0)


def map_action(u, params: PhysicalParams = DEFAULT_PARAMS):
    """Normalized command -> (total thrust [N], body-rate command [rad/s]).

    Thrust is an affine map of u[0] onto [0, f_max]; rate commands scale
    linearly with omega_max.
    """
    u = clamp_action(u)
    f_total = (u[0] + 1.0) / 2.0 * params.f_max
    omega_cmd = params.omega_max * u[1:4]
    return float(f_total), omega_cmd


def rotation_matrix(phi) -> np.ndarray:
    """Body-to-world rotation R_z(yaw) @ R_y(pitch) @ R_x(roll)."""
    roll, pitch, yaw = (float(a) for a in np.asarray(phi, dtype=float).reshape(3))
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def euler_rates(phi, omega) -> np.ndarray:
    """ZYX Euler-angle rates from body rates: phidot = W(phi) @ omega.

    Raises ValueError within PITCH_SINGULARITY_MARGIN of the pitch
    singularity; the episode layer terminates (Crash) before that regime.
    """
    phi = np.asarray(phi, dtype=float).reshape(3)
    omega = np.asarray(omega, dtype=float).reshape(3)
    roll, pitch = float(phi[0]), float(phi[1])
    if abs(pitch) >= math.pi / 2.0 - PITCH_SINGULARITY_MARGIN:
        raise ValueError(f"pitch {pitch:.4f} rad is too close to the Euler singularity")
    cr, sr = math.cos(roll), math.sin(roll)
    cp, tp = math.cos(pitch), math.tan(pitch)
    p, q, r = omega
    return np.array(
        [
            p + q * sr * tp + r * cr * tp,
            q * cr - r * sr,
            q * sr / cp + r * cr / cp,
        ]
    )


def wrap_yaw(yaw: float) -> float:
    """Wrap yaw into (-pi, pi]."""
    two_pi = 2.0 * math.pi
    return -((-yaw + math.pi) % two_pi - math.pi)


def step(
    state: QuadState,
    u,
    params: PhysicalParams = DEFAULT_PARAMS,
    mismatch: MismatchConfig = NOMINAL,
) -> QuadState:
    """Advance one control cycle with semi-implicit Euler.

    The caller is responsible for routing `u` through a DelayBuffer first.
    Order per cycle: rate-loop torque with saturation, body-rate update with
    gyroscopic coupling, translational acceleration from thrust/gravity/
    drag/wind at effective mass, then v, p (with updated v), and phi (with
    updated omega). Yaw is wrapped to (-pi, pi].
    """
    f_total, omega_cmd = map_action(u, params)

    inertia = params.inertia
    tau = np.clip(
        inertia * params.k_omega * (omega_cmd - state.omega),
        -params.tau_max,
        params.tau_max,
    )
    omega_dot = (tau - np.cross(state.omega, inertia * state.omega)) / inertia
    omega_new = state.omega + params.dt * omega_dot

    m_eff = mismatch.mass_scale * params.m0
    drag = -mismatch.drag_scale * params.cd0 * state.v
    thrust_world = rotation_matrix(state.phi) @ np.array([0.0, 0.0, f_total])
    accel = (thrust_world + m_eff * params.g + drag + mismatch.wind) / m_eff

    v_new = state.v + params.dt * accel
    p_new = state.p + params.dt * v_new
    phi_new = state.phi + params.dt * euler_rates(state.phi, omega_new)
    phi_new[2] = wrap_yaw(phi_new[2])

    return QuadState(p=p_new, v=v_new, phi=phi_new, omega=omega_new)


class UnknownConditionError(ValueError):
    """Raised for a mismatch-condition name outside the published table."""


# Perturbation table: name -> (mass_scale, drag_scale, delay_steps, wind [N]).
# The first eight are covered by (or mild relative to) the training
# randomization ranges; the last five are out-of-distribution.
_CONDITION_TABLE = {
    "nominal": (1.0, 1.0, 0, (0.0, 0.0, 0.0)),
    "mass-20": (0.8, 1.0, 0, (0.0, 0.0, 0.0)),
    "mass+20": (1.2, 1.0, 0, (0.0, 0.0, 0.0)),
    "mass+30": (1.3, 1.0, 0, (0.0, 0.0, 0.0)),
    "mass+40": (1.4, 1.0, 0, (0.0, 0.0, 0.0)),
    "drag+100": (1.0, 2.0, 0, (0.0, 0.0, 0.0)),
    "delay2": (1.0, 1.0, 2, (0.0, 0.0, 0.0)),
    "delay5": (1.0, 1.0, 5, (0.0, 0.0, 0.0)),
    "wind-med": (1.0, 1.0, 0, (1.0, 0.5, 0.0)),
    "wind-strong": (1.0, 1.0, 0, (2.0, 1.0, 0.3)),
    "combined-mild": (1.1, 1.3, 1, (0.3, 0.1, 0.0)),
    "combined-hard": (1.2, 1.5, 3, (1.0, 0.5, 0.0)),
    "combined-ood": (1.4, 1.8, 3, (1.5, 0.8, 0.2)),
    # Opt-in only: beyond the thrust ceiling, excluded from the suite.
    "mass+50": (1.5, 1.0, 0, (0.0, 0.0, 0.0)),
}

ID_CONDITIONS = (
    "nominal",
    "mass-20",
    "mass+20",
    "mass+30",
    "drag+100",
    "delay2",
    "wind-med",
    "combined-mild",
)
OOD_CONDITIONS = ("mass+40", "wind-strong", "combined-hard", "delay5", "combined-ood")
CONDITION_NAMES = ID_CONDITIONS + OOD_CONDITIONS


def mismatch_condition(name: str) -> MismatchConfig:
    """Look up a named perturbation condition (case-insensitive)."""
    key = str(name).strip().lower()
    if key not in _CONDITION_TABLE:
        known = ", ".join(CONDITION_NAMES + ("mass+50",))
        raise UnknownConditionError(f"unknown condition {name!r}; known: {known}")
    mass, drag, delay, wind = _CONDITION_TABLE[key]
    return MismatchConfig(mass_scale=mass, drag_scale=drag, delay_steps=delay, wind=wind)


@dataclass(frozen=True)
class DrRanges:
    """Per-episode uniform randomization ranges for mass and drag scales."""

    mass_lo: float = 1.0
    mass_hi: float = 1.0
    drag_lo: float = 1.0
    drag_hi: float = 1.0

    def __post_init__(self):
        if self.mass_lo > self.mass_hi or self.drag_lo > self.drag_hi:
            raise ValueError("randomization ranges need lo <= hi")


DR_PRESETS = {
    "off": DrRanges(),
    "narrow": DrRanges(0.9, 1.1, 0.8, 1.2),
    "wide": DrRanges(0.8, 1.3, 0.5, 2.0),
}


def sample_dr(ranges: DrRanges, rng: np.random.Generator) -> MismatchConfig:
    """Draw a per-episode mass/drag perturbation (delay and wind stay off)."""
    mass = rng.uniform(ranges.mass_lo, ranges.mass_hi)
    drag = rng.uniform(ranges.drag_lo, ranges.drag_hi)
    return MismatchConfig(mass_scale=float(mass), drag_scale=float(drag))
