"""Simplified muscle-actuated dynamics producing fingertip motion.

Two presets stand in for a full musculoskeletal arm:

* ``POINT_MASS6`` — a damped point mass driven by three antagonist actuator
  pairs along the world axes. This is the default training plant.
* ``LINKAGE2`` — a planar two-link arm (shoulder/elbow torque pairs) plus a
  vertical lift coordinate, for an articulated alternative.

Both are deliberately coarse surrogates: the control interface (relative
activation changes), first-order activation dynamics, physiological motor
noise and the perceived-exertion model are the fidelity-bearing parts; the
skeleton is not. Activations are driven through a two-stage lag (excitation
integrates the control signal, activation tracks excitation) and the noisy
activation that actually generates force follows the two-component motor
noise model: a multiplicative log-normal signal-dependent term and an
additive Gaussian constant term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class NonFiniteStateError(RuntimeError):
    """The integrator produced a non-finite quantity; the episode aborts."""


class Preset(Enum):
    POINT_MASS6 = "point_mass6"
    LINKAGE2 = "linkage2"


@dataclass(frozen=True)
class NoiseParams:
    """Motor-noise constants: signal-dependent and constant components."""

    k_sdn: float = 0.103
    k_cn: float = 0.185
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.k_sdn < 0 or self.k_cn < 0:
            raise ValueError("noise magnitudes must be non-negative")

    @staticmethod
    def off(rng_seed: int = 0) -> "NoiseParams":
        return NoiseParams(0.0, 0.0, rng_seed)


@dataclass(frozen=True, eq=False)
class PlantConfig:
    preset: Preset = Preset.POINT_MASS6
    dt_s: float = 0.01
    actuator_count: int = 6
    mass_kg: float = 0.08
    f_max: np.ndarray = field(default_factory=lambda: np.full(6, 3.0))
    damping: float = 1.5
    contact_damping: float = 20.0
    gravity: float = 9.81
    tau_act: float = 0.03
    tau_deact: float = 0.06
    tau_ctl: float = 0.05
    fatigue_gain: float = 0.01
    fatigue_decay: float = 0.005
    workspace_lo: np.ndarray = field(
        default_factory=lambda: np.array([-0.030, -0.030, 0.0])
    )
    workspace_hi: np.ndarray = field(
        default_factory=lambda: np.array([0.096, 0.178, 0.120])
    )
    # Hard surface: fingertip stays on the non-negative side of this plane.
    surface_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    surface_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    contact_eps_m: float = 5.0e-4
    # LINKAGE2 geometry: shoulder base (world xy), link lengths, inertias,
    # torque arms, joint damping; the z lift reuses mass/damping above.
    link_base_xy: tuple[float, float] = (0.033, -0.040)
    link_lengths: tuple[float, float] = (0.120, 0.110)
    link_inertias: tuple[float, float] = (2.0e-3, 1.0e-3)
    link_arm_m: float = 0.02
    link_damping: float = 0.02

    def __post_init__(self) -> None:
        object.__setattr__(self, "f_max", np.asarray(self.f_max, dtype=float))
        object.__setattr__(self, "workspace_lo", np.asarray(self.workspace_lo, dtype=float))
        object.__setattr__(self, "workspace_hi", np.asarray(self.workspace_hi, dtype=float))
        object.__setattr__(self, "surface_point", np.asarray(self.surface_point, dtype=float))
        n = np.asarray(self.surface_normal, dtype=float)
        object.__setattr__(self, "surface_normal", n / np.linalg.norm(n))
        if self.dt_s <= 0:
            raise ValueError("dt must be positive")
        if self.actuator_count < 2:
            raise ValueError("need at least one antagonist pair")
        if self.f_max.shape != (self.actuator_count,):
            raise ValueError("f_max must have one entry per actuator")
        if np.any(self.f_max <= 0):
            raise ValueError("f_max entries must be positive")
        if min(self.tau_act, self.tau_deact, self.tau_ctl) <= 0:
            raise ValueError("time constants must be positive")

    @staticmethod
    def point_mass6(**overrides) -> "PlantConfig":
        return PlantConfig(preset=Preset.POINT_MASS6, actuator_count=6, **overrides)

    @staticmethod
    def linkage2(**overrides) -> "PlantConfig":
        overrides.setdefault("f_max", np.full(6, 3.0))
        return PlantConfig(preset=Preset.LINKAGE2, actuator_count=6, **overrides)

    def canonical_dict(self) -> dict:
        """JSON-safe dictionary used for config hashing."""
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, np.ndarray):
                value = value.tolist()
            elif isinstance(value, Preset):
                value = value.value
            out[name] = value
        return out


@dataclass(frozen=True, eq=False)
class PlantState:
    """Value-type snapshot of the plant; ``step`` returns a new one.

    ``joints`` holds the generalized coordinates/velocities for articulated
    presets and is empty for the point mass. ``noisy_act`` is the activation
    vector, after motor noise, that generated the forces of the most recent
    step.
    """

    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    act: np.ndarray
    exc: np.ndarray
    fatigue: np.ndarray
    noisy_act: np.ndarray
    joints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    joint_vel: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def is_finite(self) -> bool:
        return all(
            bool(np.all(np.isfinite(getattr(self, f))))
            for f in ("pos", "vel", "acc", "act", "exc", "fatigue")
        )


def rest_state(cfg: PlantConfig, pos: np.ndarray) -> PlantState:
    """Plant at rest: zero velocity, zero activation, fingertip at ``pos``."""
    a = cfg.actuator_count
    pos = np.asarray(pos, dtype=float).copy()
    if cfg.preset is Preset.LINKAGE2:
        joints = _linkage_ik(cfg, pos)
        pos = _linkage_fk(cfg, joints)
        return PlantState(
            pos=pos, vel=np.zeros(3), acc=np.zeros(3),
            act=np.zeros(a), exc=np.zeros(a), fatigue=np.zeros(a),
            noisy_act=np.zeros(a), joints=joints, joint_vel=np.zeros(3),
        )
    return PlantState(
        pos=pos, vel=np.zeros(3), acc=np.zeros(3),
        act=np.zeros(a), exc=np.zeros(a), fatigue=np.zeros(a),
        noisy_act=np.zeros(a),
    )


def apply_noise(
    a: np.ndarray,
    noise: NoiseParams,
    rng: np.random.Generator,
    clip: bool = True,
) -> np.ndarray:
    """Noisy activation: multiplicative log-normal and additive Gaussian terms.

    With ``clip=False`` the raw (pre-clamp) signal is returned, which is what
    the noise-statistics checks measure.
    """
    a = np.asarray(a, dtype=float)
    factor = rng.lognormal(mean=0.0, sigma=noise.k_sdn, size=a.shape)
    additive = rng.normal(loc=0.0, scale=noise.k_cn, size=a.shape)
    noisy = factor * a + additive
    if clip:
        return np.clip(noisy, 0.0, 1.0)
    return noisy


def _linkage_fk(cfg: PlantConfig, joints: np.ndarray) -> np.ndarray:
    t1, t2, z = joints
    l1, l2 = cfg.link_lengths
    bx, by = cfg.link_base_xy
    x = bx + l1 * math.cos(t1) + l2 * math.cos(t1 + t2)
    y = by + l1 * math.sin(t1) + l2 * math.sin(t1 + t2)
    return np.array([x, y, z])

def _linkage_jacobian(cfg: PlantConfig, joints: np.ndarray) -> np.ndarray:
    t1, t2, _ = joints
    l1, l2 = cfg.link_lengths
    s1, c1 = math.sin(t1), math.cos(t1)
    s12, c12 = math.sin(t1 + t2), math.cos(t1 + t2)
    return np.array(
        [
            [-l1 * s1 - l2 * s12, -l2 * s12, 0.0],
            [l1 * c1 + l2 * c12, l2 * c12, 0.0],
            [0.0, 0.0, 1.0],
        ]
    )

def _linkage_ik(cfg: PlantConfig, pos: np.ndarray) -> np.ndarray:
    """Elbow-up inverse kinematics; clamps unreachable targets to the rim."""
    l1, l2 = cfg.link_lengths
    bx, by = cfg.link_base_xy
    dx, dy = pos[0] - bx, pos[1] - by
    r = math.hypot(dx, dy)
    r = min(max(r, abs(l1 - l2) + 1e-6), l1 + l2 - 1e-6)
    cos_t2 = (r * r - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    t2 = math.acos(min(max(cos_t2, -1.0), 1.0))
    t1 = math.atan2(dy, dx) - math.atan2(l2 * math.sin(t2), l1 + l2 * math.cos(t2))
    return np.array([t1, t2, pos[2]])


def step(
    state: PlantState,
    control: np.ndarray,
    cfg: PlantConfig,
    noise: NoiseParams,
    rng: np.random.Generator,
) -> PlantState:
    """Advance the plant one time step under a relative activation command.

    Controls in [-1, 1] integrate into excitations, activations track the
    excitations with asymmetric rise/fall time constants, motor noise
    perturbs the activations, and the resulting actuator forces drive the
    fingertip through semi-implicit Euler integration. The screen surface is
    a hard half-space constraint with extra tangential damping while in
    contact; the workspace box clamps with zeroed normal velocity.
    """
    dt = cfg.dt_s
    control = np.clip(np.asarray(control, dtype=float), -1.0, 1.0)
    exc = np.clip(state.exc + control * (dt / cfg.tau_ctl), 0.0, 1.0)
    tau = np.where(exc >= state.act, cfg.tau_act, cfg.tau_deact)
    act = np.clip(state.act + (exc - state.act) * (dt / tau), 0.0, 1.0)
    noisy = apply_noise(act, noise, rng)
    forces = noisy * cfg.f_max

    if cfg.preset is Preset.POINT_MASS6:
        new_state = _step_point_mass(state, forces, act, exc, cfg, dt)
    else:
        new_state = _step_linkage(state, forces, act, exc, cfg, dt)

    fatigue = np.clip(
        state.fatigue + (cfg.fatigue_gain * act - cfg.fatigue_decay * state.fatigue) * dt,
        0.0,
        1.0,
    )
    new_state = replace(new_state, fatigue=fatigue, noisy_act=noisy)
    if not new_state.is_finite():
        raise NonFiniteStateError("plant state became non-finite")
    return new_state


def _surface_gap(cfg: PlantConfig, pos: np.ndarray) -> float:
    return float(np.dot(cfg.surface_normal, pos - cfg.surface_point))


def _step_point_mass(
    state: PlantState,
    forces: np.ndarray,
    act: np.ndarray,
    exc: np.ndarray,
    cfg: PlantConfig,
    dt: float,
) -> PlantState:
    # antagonist pairs: (0,1)=+/-x, (2,3)=+/-y, (4,5)=+/-z in world axes
    f_net = np.array(
        [forces[0] - forces[1], forces[2] - forces[3], forces[4] - forces[5]]
    )
    f_net[2] -= cfg.mass_kg * cfg.gravity
    f_net -= cfg.damping * state.vel
    in_contact = _surface_gap(cfg, state.pos) <= cfg.contact_eps_m
    if in_contact:
        n = cfg.surface_normal
        v_tan = state.vel - np.dot(state.vel, n) * n
        f_net -= cfg.contact_damping * v_tan

    vel = state.vel + (dt / cfg.mass_kg) * f_net
    pos = state.pos + dt * vel

    # hard surface: project back onto the plane, kill inward normal velocity
    gap = _surface_gap(cfg, pos)
    if gap < 0.0:
        n = cfg.surface_normal
        pos = pos - gap * n
        v_n = np.dot(vel, n)
        if v_n < 0.0:
            vel = vel - v_n * n

    below = pos < cfg.workspace_lo
    above = pos > cfg.workspace_hi
    if below.any() or above.any():
        pos = np.clip(pos, cfg.workspace_lo, cfg.workspace_hi)
        vel = np.where(below & (vel < 0), 0.0, vel)
        vel = np.where(above & (vel > 0), 0.0, vel)

    acc = (vel - state.vel) / dt
    return PlantState(
        pos=pos, vel=vel, acc=acc, act=act, exc=exc,
        fatigue=state.fatigue, noisy_act=state.noisy_act,
    )


def _step_linkage(
    state: PlantState,
    forces: np.ndarray,
    act: np.ndarray,
    exc: np.ndarray,
    cfg: PlantConfig,
    dt: float,
) -> PlantState:
    # pairs: (0,1) shoulder +/- torque, (2,3) elbow +/- torque, (4,5) lift +/- force
    arm = cfg.link_arm_m
    tau1 = (forces[0] - forces[1]) * arm
    tau2 = (forces[2] - forces[3]) * arm
    fz = forces[4] - forces[5] - cfg.mass_kg * cfg.gravity

    q = state.joints
    qd = state.joint_vel
    in_contact = q[2] <= cfg.contact_eps_m
    damp = cfg.link_damping * (1.0 + (cfg.contact_damping / cfg.damping if in_contact else 0.0))
    i1, i2 = cfg.link_inertias
    qdd = np.array(
        [
            (tau1 - damp * qd[0]) / i1,
            (tau2 - damp * qd[1]) / i2,
            (fz - cfg.damping * qd[2]) / cfg.mass_kg,
        ]
    )
    qd = qd + dt * qdd
    q = q + dt * qd
    if q[2] < 0.0:
        q[2] = 0.0
        qd[2] = max(qd[2], 0.0)
    # joint limits keep the arm in front of the base
    limits_lo = np.array([-0.5 * math.pi, 0.05, 0.0])
    limits_hi = np.array([1.5 * math.pi, math.pi - 0.05, cfg.workspace_hi[2]])
    clamped_lo = q < limits_lo
    clamped_hi = q > limits_hi
    q = np.clip(q, limits_lo, limits_hi)
    qd = np.where(clamped_lo & (qd < 0), 0.0, qd)
    qd = np.where(clamped_hi & (qd > 0), 0.0, qd)

    pos = _linkage_fk(cfg, np.array([q[0], q[1], q[2]]))
    vel = _linkage_jacobian(cfg, q) @ qd
    acc = (vel - state.vel) / dt
    return PlantState(
        pos=pos, vel=vel, acc=acc, act=act, exc=exc,
        fatigue=state.fatigue, noisy_act=state.noisy_act,
        joints=q, joint_vel=qd,
    )


# --------------------------------------------------------------------------
# Perceived-exertion model

#: Force fraction below which the endurance model is undefined; exertion is
#: clamped to zero there.
EFFORT_FORCE_FLOOR = 0.15


def endurance_exertion(force_fraction: np.ndarray | float) -> np.ndarray | float:
    """Perceived-exertion score for a force as a fraction of maximum force.

    ``E(F) = 1236.5 / (100 * F/Fmax - 15)^0.618 - 72.5`` above the 15%
    force floor, zero at or below it. Note the score *decreases* with force:
    it derives from an endurance-time model (a force level you can hold
    longer scores higher endurance).
    """
    f = np.asarray(force_fraction, dtype=float)
    base = 100.0 * f - 15.0
    with np.errstate(invalid="ignore"):
        val = np.where(base > 0.0, 1236.5 / np.power(np.maximum(base, 1e-300), 0.618) - 72.5, 0.0)
    if np.isscalar(force_fraction):
        return float(val)
    return val


def effort_instant(state: PlantState, cfg: PlantConfig) -> np.ndarray:
    """Per-actuator exertion score from the most recent step's noisy forces."""
    return np.asarray(endurance_exertion(state.noisy_act))


def muscle_load(state: PlantState) -> float:
    """Summed noisy activation: the per-step muscle-load used for effort
    traces. Bounded, monotone in force, and robust to the endurance model's
    near-threshold singularity."""
    return float(np.sum(state.noisy_act))
