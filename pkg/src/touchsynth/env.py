"""Episodic gesture environment: plant + touchscreen + shaped reward.

One environment instance runs one gesture episode at a time. Episodes end on
success (a clean tap on the target, or a swipe reaching its end region),
on timeout, or on a broken swipe contact. Successive gestures chain through
:class:`CarryState`, which hands the full continuation record (position,
velocity, activations, fatigue and integrator internals) from one episode to
the next so multi-gesture motion is exactly continuous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import plant as plant_mod
from . import reward as reward_mod
from .plant import NoiseParams, PlantConfig, PlantState, Preset
from .reward import EpisodeOutcome, RewardWeights, StepReward
from .surface import (
    TAP_SLOP_MM,
    ContactSample,
    Phase,
    ScreenSpec,
    TargetRegion,
    sense_contact,
)

#: Height of the canonical rest pose above the screen centre (m).
REST_HEIGHT_M = 0.030

TAP_TIME_LIMIT_S = 2.0
SWIPE_TIME_LIMIT_S = 3.0


class EnvError(RuntimeError):
    pass


class SteppedAfterDone(EnvError):
    pass


class InvalidCarry(ValueError):
    pass


class OperatorKind(Enum):
    TAP_FAST = "tap_fast"
    TAP_NORMAL = "tap_normal"
    TAP_ACCURATE = "tap_accurate"
    SWIPE = "swipe"

    @property
    def is_swipe(self) -> bool:
        return self is OperatorKind.SWIPE


#: Observation one-hot order for the operator kind.
OPERATOR_ORDER = (
    OperatorKind.TAP_FAST,
    OperatorKind.TAP_NORMAL,
    OperatorKind.TAP_ACCURATE,
    OperatorKind.SWIPE,
)

PROFILE_KINDS = {
    "fast": OperatorKind.TAP_FAST,
    "normal": OperatorKind.TAP_NORMAL,
    "accurate": OperatorKind.TAP_ACCURATE,
}


@dataclass(frozen=True)
class OperatorSpec:
    """One atomic gesture: a tap on a target or a swipe between regions."""

    kind: OperatorKind
    target: TargetRegion | None = None
    swipe_start: TargetRegion | None = None
    swipe_end: TargetRegion | None = None
    time_limit_s: float | None = None

    def __post_init__(self) -> None:
        if self.kind.is_swipe:
            if self.swipe_start is None or self.swipe_end is None:
                raise ValueError("swipe specs need start and end regions")
        elif self.target is None:
            raise ValueError("tap specs need a target region")
        if self.time_limit_s is None:
            limit = SWIPE_TIME_LIMIT_S if self.kind.is_swipe else TAP_TIME_LIMIT_S
            object.__setattr__(self, "time_limit_s", limit)
        if self.time_limit_s <= 0:
            raise ValueError("time limit must be positive")

    @property
    def operative_region(self) -> TargetRegion:
        """The region that decides a first-contact hit: tap target or swipe start."""
        return self.swipe_start if self.kind.is_swipe else self.target

    def with_kind(self, kind: OperatorKind) -> "OperatorSpec":
        if kind.is_swipe != self.kind.is_swipe:
            raise ValueError("cannot change a tap spec into a swipe spec")
        return OperatorSpec(kind, self.target, self.swipe_start, self.swipe_end, self.time_limit_s)


@dataclass(frozen=True)
class CarryState:
    """Final motor state handed to the next episode for seamless sequencing."""

    pos: np.ndarray
    vel: np.ndarray
    act: np.ndarray
    fatigue: np.ndarray
    exc: np.ndarray
    acc: np.ndarray
    noisy_act: np.ndarray
    joints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    joint_vel: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @staticmethod
    def from_plant_state(state: PlantState) -> "CarryState":
        return CarryState(
            pos=state.pos.copy(), vel=state.vel.copy(), act=state.act.copy(),
            fatigue=state.fatigue.copy(), exc=state.exc.copy(), acc=state.acc.copy(),
            noisy_act=state.noisy_act.copy(), joints=state.joints.copy(),
            joint_vel=state.joint_vel.copy(),
        )

    def to_plant_state(self, cfg: PlantConfig) -> PlantState:
        joints = self.joints
        joint_vel = self.joint_vel
        if cfg.preset is Preset.LINKAGE2 and joints.size == 0:
            joints = plant_mod._linkage_ik(cfg, self.pos)
            joint_vel = np.zeros(3)
        return PlantState(
            pos=self.pos.copy(), vel=self.vel.copy(), acc=self.acc.copy(),
            act=self.act.copy(), exc=self.exc.copy(), fatigue=self.fatigue.copy(),
            noisy_act=self.noisy_act.copy(), joints=joints.copy(),
            joint_vel=joint_vel.copy(),
        )


def contact_start_carry(
    screen: ScreenSpec, x_mm: float, y_mm: float, cfg: PlantConfig
) -> CarryState:
    """Carry placing a resting fingertip on the screen at a given point."""
    a = cfg.actuator_count
    pos = screen.local_mm_to_world(x_mm, y_mm, 0.0)
    return CarryState(
        pos=pos, vel=np.zeros(3), act=np.zeros(a), fatigue=np.zeros(a),
        exc=np.zeros(a), acc=np.zeros(3), noisy_act=np.zeros(a),
    )


def hover_carry(
    screen: ScreenSpec,
    x_mm: float,
    y_mm: float,
    height_m: float,
    cfg: PlantConfig,
    vel: np.ndarray | None = None,
    act: np.ndarray | None = None,
) -> CarryState:
    """Carry placing the fingertip above the screen, optionally moving."""
    a = cfg.actuator_count
    act = np.zeros(a) if act is None else np.asarray(act, dtype=float)
    vel = np.zeros(3) if vel is None else np.asarray(vel, dtype=float)
    return CarryState(
        pos=screen.local_mm_to_world(x_mm, y_mm, height_m),
        vel=vel, act=act, fatigue=np.zeros(a), exc=act.copy(),
        acc=np.zeros(3), noisy_act=act.copy(),
    )


@dataclass
class EpisodeResult:
    """Everything recorded about one gesture episode."""

    outcome: EpisodeOutcome
    steps: int
    dt_s: float
    movement_time_s: float | None
    trajectory: list[PlantState]
    contacts: list[ContactSample]
    episode_return: float
    effort_trace: np.ndarray
    peak_effort: float
    total_effort: float
    kind: OperatorKind
    target_id: str
    first_contact_miss: bool
    liftoff_index: int | None
    first_down_index: int | None

    @property
    def success(self) -> bool:
        return self.outcome is EpisodeOutcome.SUCCESS

    @property
    def duration_s(self) -> float:
        return self.steps * self.dt_s

    @property
    def final_state(self) -> PlantState:
        return self.trajectory[-1]

    def positions(self) -> np.ndarray:
        return np.array([s.pos for s in self.trajectory])


def extract_carry(result: EpisodeResult) -> CarryState:
    return CarryState.from_plant_state(result.final_state)


def plant_config_for_screen(
    screen: ScreenSpec,
    preset: Preset = Preset.POINT_MASS6,
    lateral_margin_m: float = 0.030,
    height_m: float = 0.120,
    **overrides,
) -> PlantConfig:
    """Plant config whose hard surface and workspace box follow the screen pose."""
    corners = []
    for x in (0.0, screen.width_mm):
        for y in (0.0, screen.height_mm):
            for h in (0.0, height_m):
                corners.append(screen.local_mm_to_world(x, y, h))
    corners = np.array(corners)
    lo = corners.min(axis=0) - lateral_margin_m
    hi = corners.max(axis=0) + lateral_margin_m
    factory = PlantConfig.point_mass6 if preset is Preset.POINT_MASS6 else PlantConfig.linkage2
    return factory(
        workspace_lo=lo,
        workspace_hi=hi,
        surface_point=screen.pose.translation.copy(),
        surface_normal=screen.pose.normal,
        **overrides,
    )


def rest_pose_world(screen: ScreenSpec) -> np.ndarray:
    cx, cy = screen.center_mm
    return screen.local_mm_to_world(cx, cy, REST_HEIGHT_M)


class _ContactTracker:
    """Incremental down/move/up detection with per-contact bookkeeping."""

    def __init__(self, started_in_contact: bool, start_pos_mm, start_node):
        self.in_contact = started_in_contact
        self.tracking_down = False  # current contact began with an observed down
        self.samples: list[ContactSample] = []
        self.current: list[ContactSample] = []
        self.last_pos_mm = start_pos_mm
        self.last_node = start_node
        self.path_mm = 0.0
        self.down_pos: tuple[float, float] | None = None
        self.first_down_t: float | None = None
        self.liftoff_t: float | None = None
        self.first_down_index: int | None = None
        self.liftoff_index: int | None = None

    def update(self, t_s, step_index, snapped, node, inside):
        """Returns (down_event, up_event, completed_contact)."""
        down = False
        up = False
        completed: list[ContactSample] | None = None
        if snapped is not None:
            if not self.in_contact:
                down = True
                self.in_contact = True
                self.tracking_down = True
                self.path_mm = 0.0
                self.down_pos = snapped
                sample = ContactSample(t_s, node, snapped, Phase.DOWN, inside)
                self.current = [sample]
                self.samples.append(sample)
                if self.first_down_t is None:
                    self.first_down_t = t_s
                    self.first_down_index = step_index
            else:
                sample = ContactSample(t_s, node, snapped, Phase.MOVE, inside)
                if self.tracking_down:
                    self.path_mm += math.hypot(
                        snapped[0] - self.last_pos_mm[0], snapped[1] - self.last_pos_mm[1]
                    )
                    self.current.append(sample)
                self.samples.append(sample)
            self.last_pos_mm = snapped
            self.last_node = node
        elif self.in_contact:
            up = True
            self.in_contact = False
            sample = ContactSample(t_s, self.last_node, self.last_pos_mm, Phase.UP, inside)
            self.samples.append(sample)
            if self.tracking_down:
                self.current.append(sample)
                completed = self.current
            self.tracking_down = False
            self.current = []
            # The lift-off reference for movement time is the up that ends
            # the episode's initial resting contact, if it started in one.
            if self.liftoff_t is None and self.first_down_t is None:
                self.liftoff_t = t_s
                self.liftoff_index = step_index
        return down, up, completed


class GestureEnv:
    """Single-gesture episodic environment with operator-conditioned goals."""

    def __init__(
        self,
        screen: ScreenSpec,
        plant_cfg: PlantConfig,
        noise: NoiseParams,
        weights: RewardWeights,
        seed: int = 0,
    ):
        self.screen = screen
        self.plant_cfg = plant_cfg
        self.noise = noise
        self.base_weights = weights
        self._rng = np.random.default_rng(np.uint64(noise.rng_seed) ^ np.uint64(seed))
        self._spec: OperatorSpec | None = None
        self._done = True
        self._state: PlantState | None = None

    # -- dimensions ------------------------------------------------------

    @property
    def action_dim(self) -> int:
        return self.plant_cfg.actuator_count

    @property
    def obs_dim(self) -> int:
        a = self.plant_cfg.actuator_count
        return 2 * a + 3 + 3 + 3 + 1 + 1 + 3 + 4

    # -- episode control --------------------------------------------------

    def reset(
        self,
        spec: OperatorSpec,
        carry: CarryState | None = None,
        seed: int | None = None,
    ) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._spec = spec
        self._t_max = int(math.ceil(spec.time_limit_s / self.plant_cfg.dt_s))
        self.weights = self.base_weights.with_t_max(self._t_max)

        if carry is not None:
            self._validate_carry(carry)
            state = carry.to_plant_state(self.plant_cfg)
        else:
            state = plant_mod.rest_state(self.plant_cfg, rest_pose_world(self.screen))
        self._state = state

        self._swipe_begun = False
        self._target_point = self._goal_point()
        self._d_ref = max(float(np.linalg.norm(state.pos - self._target_point)), 1e-9)
        snapped = sense_contact(state.pos, self.screen)
        node = self.screen.snap_node(*snapped) if snapped else (0, 0)
        self._tracker = _ContactTracker(snapped is not None, snapped or (0.0, 0.0), node)
        self._steps = 0
        self._done = False
        self._return = 0.0
        self._first_contact_miss: bool | None = None
        self._outcome: EpisodeOutcome | None = None
        self._trajectory = [state]
        self._effort_trace: list[float] = []
        self._result: EpisodeResult | None = None
        return self._observe()

    def _validate_carry(self, carry: CarryState) -> None:
        arrays = (carry.pos, carry.vel, carry.act, carry.fatigue, carry.exc)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise InvalidCarry("carry state contains non-finite values")
        cfg = self.plant_cfg
        if np.any(carry.pos < cfg.workspace_lo - 1e-12) or np.any(
            carry.pos > cfg.workspace_hi + 1e-12
        ):
            raise InvalidCarry("carry fingertip position outside the workspace")
        if carry.act.shape != (cfg.actuator_count,):
            raise InvalidCarry("carry activation size does not match the plant")
        if np.any(carry.act < 0) or np.any(carry.act > 1):
            raise InvalidCarry("carry activations outside [0, 1]")

    def step(self, control: np.ndarray) -> tuple[np.ndarray, StepReward, bool, dict]:
        if self._done:
            raise SteppedAfterDone("episode is done; call reset")
        spec = self._spec
        prev_acc = self._state.acc
        state = plant_mod.step(self._state, control, self.plant_cfg, self.noise, self._rng)
        self._state = state
        self._steps += 1
        t_s = self._steps * self.plant_cfg.dt_s

        snapped = sense_contact(state.pos, self.screen)
        node = self.screen.snap_node(*snapped) if snapped else None
        inside = self._inside_label(snapped)
        down, up, completed = self._tracker.update(
            t_s, self._steps, snapped, node, inside
        )

        miss_event = False
        contact_break = False
        outcome: EpisodeOutcome | None = None

        if spec.kind.is_swipe:
            if down:
                in_start = spec.swipe_start.contains(*snapped)
                if self._first_contact_miss is None:
                    self._first_contact_miss = not in_start
                if not self._swipe_begun and in_start:
                    self._swipe_begun = True
                    self._target_point = self._goal_point()
                    self._d_ref = max(
                        float(np.linalg.norm(state.pos - self._target_point)), 1e-9
                    )
            if self._swipe_begun and snapped is not None:
                if spec.swipe_end.contains(*snapped):
                    outcome = EpisodeOutcome.SUCCESS
            if self._swipe_begun and up and outcome is None:
                contact_break = True
                outcome = EpisodeOutcome.SWIPE_BROKEN
        else:
            if down:
                on_target = spec.target.contains(*snapped)
                if self._first_contact_miss is None:
                    self._first_contact_miss = not on_target
                if not on_target:
                    miss_event = True
            if completed is not None and self._tap_hit(completed):
                outcome = EpisodeOutcome.SUCCESS

        if outcome is None and self._steps >= self._t_max:
            outcome = EpisodeOutcome.TIMEOUT

        jerk_mag = float(np.linalg.norm((state.acc - prev_acc) / self.plant_cfg.dt_s))
        distance = float(np.linalg.norm(state.pos - self._target_point))
        step_reward = reward_mod.shaping(
            distance=distance,
            d_ref=self._d_ref,
            activations=state.act,
            jerk_mag=jerk_mag,
            miss_event=miss_event,
            contact_break=contact_break,
            weights=self.weights,
            swipe=spec.kind.is_swipe,
        )
        if outcome is not None:
            step_reward = StepReward(
                components=step_reward.components,
                shaping_total=step_reward.shaping_total,
                terminal=reward_mod.terminal(outcome, self.weights),
            )
        self._check_components(step_reward)

        self._return += step_reward.total
        self._trajectory.append(state)
        self._effort_trace.append(plant_mod.muscle_load(state))

        done = outcome is not None
        if done:
            self._outcome = outcome
            self._done = True
            self._finalize()

        info = {
            "down": down,
            "up": up,
            "miss_event": miss_event,
            "contact": snapped,
            "outcome": outcome,
            "t_s": t_s,
        }
        return self._observe(), step_reward, done, info

    def _tap_hit(self, contact: list[ContactSample]) -> bool:
        target = self._spec.target
        down = contact[0]
        lift = contact[-1]
        path = 0.0
        for a, b in zip(contact, contact[1:]):
            path += math.hypot(b.pos_mm[0] - a.pos_mm[0], b.pos_mm[1] - a.pos_mm[1])
        return (
            target.contains(*down.pos_mm)
            and target.contains(*lift.pos_mm)
            and path < TAP_SLOP_MM
        )

    def _check_components(self, sr: StepReward) -> None:
        for name, value in sr.components.items():
            if not (-1.0 - 1e-9 <= value <= 1e-9):
                raise EnvError(f"shaping component {name!r}={value} outside [-1, 0]")

    def _finalize(self) -> None:
        lo, hi = reward_mod.return_bounds(self.weights)
        if not (lo - 1e-6 <= self._return <= hi + 1e-6):
            raise EnvError(f"episode return {self._return} outside [{lo}, {hi}]")
        tracker = self._tracker
        movement_time = None
        liftoff_t = tracker.liftoff_t if tracker.liftoff_t is not None else 0.0
        if tracker.first_down_t is not None:
            movement_time = max(tracker.first_down_t - liftoff_t, 0.0)
        effort = np.asarray(self._effort_trace)
        spec = self._spec
        target_id = (
            spec.swipe_end.id if spec.kind.is_swipe else spec.target.id
        )
        self._result = EpisodeResult(
            outcome=self._outcome,
            steps=self._steps,
            dt_s=self.plant_cfg.dt_s,
            movement_time_s=movement_time,
            trajectory=self._trajectory,
            contacts=tracker.samples,
            episode_return=self._return,
            effort_trace=effort,
            peak_effort=float(effort.max()) if effort.size else 0.0,
            total_effort=float(effort.sum() * self.plant_cfg.dt_s),
            kind=spec.kind,
            target_id=target_id,
            first_contact_miss=bool(self._first_contact_miss),
            liftoff_index=tracker.liftoff_index,
            first_down_index=tracker.first_down_index,
        )

    def result(self) -> EpisodeResult:
        if self._result is None:
            raise EnvError("episode is not finished")
        return self._result

    # -- observation -----------------------------------------------------

    def _goal_point(self) -> np.ndarray:
        spec = self._spec
        if spec.kind.is_swipe:
            region = spec.swipe_end if self._swipe_begun else spec.swipe_start
        else:
            region = spec.target
        cx, cy = region.center_mm
        return self.screen.local_mm_to_world(cx, cy, 0.0)

    def _goal_width_mm(self) -> float:
        spec = self._spec
        if spec.kind.is_swipe:
            region = spec.swipe_end if self._swipe_begun else spec.swipe_start
        else:
            region = spec.target
        return region.width_mm

    def _inside_label(self, snapped) -> str | None:
        if snapped is None:
            return None
        spec = self._spec
        if spec.kind.is_swipe:
            region = spec.swipe_end if self._swipe_begun else spec.swipe_start
        else:
            region = spec.target
        return region.id if region.contains(*snapped) else None

    def _observe(self) -> np.ndarray:
        state = self._state
        self._target_point = self._goal_point()
        snapped = sense_contact(state.pos, self.screen)
        if snapped is None:
            c_state = (0.0, 0.0, 1.0)
        elif self._inside_label(snapped) is not None:
            c_state = (1.0, 0.0, 0.0)
        else:
            c_state = (0.0, 1.0, 0.0)
        op_onehot = [1.0 if self._spec.kind is k else 0.0 for k in OPERATOR_ORDER]
        d = float(np.linalg.norm(state.pos - self._target_point))
        obs = np.concatenate(
            [
                state.act,
                state.pos,
                state.vel,
                self._target_point,
                [d],
                [self._goal_width_mm()],
                c_state,
                state.fatigue,
                op_onehot,
            ]
        )
        return obs.astype(np.float64)
