"""Virtual touchscreen: grid contact sensing, target geometry, scripted app.

The screen is a rigid rectangle placed in world space by a pose. Contact
sensing snaps fingertip positions to a capacitive-style grid of nodes, and
completed contacts are classified (tap hit/miss, swipe completed/broken)
against the target regions of a deterministic scripted application that
stands in for real device software.

All screen-local coordinates are millimetres; world coordinates are metres.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MM_PER_M = 1000.0

#: Normal distance (mm) below which the fingertip counts as touching.
CONTACT_EPS_MM = 0.5

#: Press/lift separation (mm) below which a contact is a tap, not a swipe.
TAP_SLOP_MM = 2.0


class ScenarioError(ValueError):
    """Raised for malformed scenario files."""


def _rotation_about(axis: np.ndarray, degrees: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    a = math.radians(degrees)
    c, s = math.cos(a), math.sin(a)
    x, y, z = axis
    # Rodrigues' formula
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform placing the screen in world space.

    ``rotation`` columns are the screen's local x (width), y (height) and
    z (outward normal) axes expressed in world coordinates; ``translation``
    is the world position of the screen origin (lower-left corner), metres.
    """

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("pose rotation must be orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("pose rotation must be proper (det +1)")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.eye(3))

    def world_to_local(self, p_world: np.ndarray) -> np.ndarray:
        return self.rotation.T @ (np.asarray(p_world, dtype=float) - self.translation)

    def local_to_world(self, p_local: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(p_local, dtype=float) + self.translation

    @property
    def normal(self) -> np.ndarray:
        return self.rotation[:, 2].copy()


@dataclass(frozen=True, eq=False)
class ScreenSpec:
    """Touchscreen geometry and sensing parameters."""

    width_mm: float = 66.0
    height_mm: float = 148.0
    grid_pitch_mm: float = 1.25
    refresh_hz: float = 10.0
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self) -> None:
        if self.width_mm <= 0 or self.height_mm <= 0 or self.grid_pitch_mm <= 0:
            raise ValueError("screen dimensions and grid pitch must be positive")
        if self.refresh_hz <= 0:
            raise ValueError("refresh rate must be positive")
        if self.n_nodes_x < 2 or self.n_nodes_y < 2:
            raise ValueError("grid pitch must fit at least a 2x2 node grid")

    @property
    def n_nodes_x(self) -> int:
        return int(math.floor(self.width_mm / self.grid_pitch_mm + 1e-9)) + 1

    @property
    def n_nodes_y(self) -> int:
        return int(math.floor(self.height_mm / self.grid_pitch_mm + 1e-9)) + 1

    @property
    def center_mm(self) -> tuple[float, float]:
        return (self.width_mm / 2.0, self.height_mm / 2.0)

    def local_mm_to_world(self, x_mm: float, y_mm: float, height_m: float = 0.0) -> np.ndarray:
        """World position of a screen point, lifted ``height_m`` along the normal."""
        return self.pose.local_to_world(
            np.array([x_mm / MM_PER_M, y_mm / MM_PER_M, height_m])
        )

    def world_to_local_mm(self, p_world: np.ndarray) -> tuple[float, float, float]:
        """Screen-local (x_mm, y_mm, normal_distance_m) of a world point."""
        loc = self.pose.world_to_local(p_world)
        return (loc[0] * MM_PER_M, loc[1] * MM_PER_M, loc[2])

    def contains_mm(self, x_mm: float, y_mm: float) -> bool:
        return 0.0 <= x_mm <= self.width_mm and 0.0 <= y_mm <= self.height_mm

    def snap_node(self, x_mm: float, y_mm: float) -> tuple[int, int]:
        """Nearest grid node index, ties toward the lower index."""
        ix = min(max(math.ceil(x_mm / self.grid_pitch_mm - 0.5), 0), self.n_nodes_x - 1)
        iy = min(max(math.ceil(y_mm / self.grid_pitch_mm - 0.5), 0), self.n_nodes_y - 1)
        return ix, iy

    def node_pos_mm(self, node: tuple[int, int]) -> tuple[float, float]:
        return (node[0] * self.grid_pitch_mm, node[1] * self.grid_pitch_mm)

    def tilted(self, degrees: float, axis: str = "x") -> "ScreenSpec":
        """Copy of this screen rotated about a local axis through its centre."""
        axes = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0])}
        if axis not in axes:
            raise ValueError(f"tilt axis must be one of {sorted(axes)}")
        c_local = np.array([self.width_mm / 2 / MM_PER_M, self.height_mm / 2 / MM_PER_M, 0.0])
        c_world = self.pose.local_to_world(c_local)
        r_axis_world = self.pose.rotation @ axes[axis]
        r = _rotation_about(r_axis_world, degrees)
        new_rot = r @ self.pose.rotation
        new_t = c_world - new_rot @ c_local
        return ScreenSpec(
            self.width_mm,
            self.height_mm,
            self.grid_pitch_mm,
            self.refresh_hz,
            Pose(new_t, new_rot),
        )


# --------------------------------------------------------------------------
# Target geometry


@dataclass(frozen=True)
class Circle:
    center_mm: tuple[float, float]
    diameter_mm: float

    def contains(self, x_mm: float, y_mm: float) -> bool:
        dx = x_mm - self.center_mm[0]
        dy = y_mm - self.center_mm[1]
        return dx * dx + dy * dy <= (self.diameter_mm / 2.0) ** 2

    @property
    def width_mm(self) -> float:
        return self.diameter_mm


@dataclass(frozen=True)
class Rect:
    min_mm: tuple[float, float]
    max_mm: tuple[float, float]

    def contains(self, x_mm: float, y_mm: float) -> bool:
        return (
            self.min_mm[0] <= x_mm <= self.max_mm[0]
            and self.min_mm[1] <= y_mm <= self.max_mm[1]
        )

    @property
    def center_mm(self) -> tuple[float, float]:
        return (
            (self.min_mm[0] + self.max_mm[0]) / 2.0,
            (self.min_mm[1] + self.max_mm[1]) / 2.0,
        )

    @property
    def width_mm(self) -> float:
        # smaller extent: the binding accuracy constraint for pointing
        return min(self.max_mm[0] - self.min_mm[0], self.max_mm[1] - self.min_mm[1])


@dataclass(frozen=True)
class TargetRegion:
    """A tappable or swipeable region on the screen."""

    id: str
    shape: Circle | Rect
    is_swipe_endpoint: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.shape, Circle) and self.shape.diameter_mm <= 0:
            raise ValueError(f"region {self.id!r}: diameter must be positive")
        if isinstance(self.shape, Rect):
            if (
                self.shape.min_mm[0] >= self.shape.max_mm[0]
                or self.shape.min_mm[1] >= self.shape.max_mm[1]
            ):
                raise ValueError(f"region {self.id!r}: rect min must be below max")

    def contains(self, x_mm: float, y_mm: float) -> bool:
        return self.shape.contains(x_mm, y_mm)

    @property
    def center_mm(self) -> tuple[float, float]:
        return self.shape.center_mm

    @property
    def width_mm(self) -> float:
        return self.shape.width_mm

    def validate_inside(self, screen: ScreenSpec) -> None:
        if isinstance(self.shape, Circle):
            r = self.shape.diameter_mm / 2.0
            cx, cy = self.shape.center_mm
            ok = (
                cx - r >= 0
                and cy - r >= 0
                and cx + r <= screen.width_mm
                and cy + r <= screen.height_mm
            )
        else:
            ok = screen.contains_mm(*self.shape.min_mm) and screen.contains_mm(
                *self.shape.max_mm
            )
        if not ok:
            raise ValueError(f"region {self.id!r} extends outside the screen")


# --------------------------------------------------------------------------
# Contact samples and classification


class Phase(Enum):
    DOWN = "down"
    MOVE = "move"
    UP = "up"


@dataclass(frozen=True)
class ContactSample:
    """One grid-sensed contact reading."""

    t_s: float
    node: tuple[int, int]
    pos_mm: tuple[float, float]
    phase: Phase
    inside: str | None = None


class OutcomeKind(Enum):
    HIT = "hit"
    MISS = "miss"
    SWIPE_COMPLETED = "swipe_completed"
    SWIPE_BROKEN = "swipe_broken"


@dataclass(frozen=True)
class TouchOutcome:
    kind: OutcomeKind
    region_id: str | None = None


class EmptyContact(ValueError):
    """Raised when a contact sequence has no down sample."""


def sense_contact(
    fingertip_pos_world: np.ndarray,
    screen: ScreenSpec,
    contact_eps_mm: float = CONTACT_EPS_MM,
) -> tuple[float, float] | None:
    """Grid-snapped screen coordinate of a touching fingertip, else ``None``.

    The fingertip touches when it is within ``contact_eps_mm`` of the screen
    plane (either side) and inside the screen bounds. Snapping picks the
    nearest grid node, ties toward the lower index.
    """
    x_mm, y_mm, z_m = screen.world_to_local_mm(fingertip_pos_world)
    if abs(z_m) * MM_PER_M > contact_eps_mm:
        return None
    if not screen.contains_mm(x_mm, y_mm):
        return None
    return screen.node_pos_mm(screen.snap_node(x_mm, y_mm))


def _path_length_mm(samples: Sequence[ContactSample]) -> float:
    total = 0.0
    for a, b in zip(samples, samples[1:]):
        total += math.hypot(b.pos_mm[0] - a.pos_mm[0], b.pos_mm[1] - a.pos_mm[1])
    return total


def classify_touch(
    contact: Sequence[ContactSample],
    app_state: str,
    app: "ScriptedApp",
    tap_slop_mm: float = TAP_SLOP_MM,
) -> TouchOutcome:
    """Classify one completed contact against the regions of an app state.

    Rules, applied to the down position, the lift position and the contact
    path length:

    * down outside every region -> miss;
    * down and lift inside the same region with path below the tap slop -> hit;
    * contact starting in a region and reaching a different swipe-endpoint
      region while continuous -> swipe completed on that endpoint;
    * contact starting in a swipe-endpoint region that lifts before reaching
      another endpoint -> swipe broken;
    * anything else (a tap that slid out of its region) -> miss.
    """
    if not contact or contact[0].phase is not Phase.DOWN:
        raise EmptyContact("contact sequence must begin with a down sample")
    regions = app.regions_of(app_state)
    down = contact[0]
    down_region = _region_at(regions, down.pos_mm)
    if down_region is None:
        return TouchOutcome(OutcomeKind.MISS)
    lift = contact[-1]
    if (
        _path_length_mm(contact) < tap_slop_mm
        and down_region.contains(*lift.pos_mm)
    ):
        return TouchOutcome(OutcomeKind.HIT, down_region.id)
    for sample in contact[1:]:
        hit = _region_at(regions, sample.pos_mm)
        if hit is not None and hit.id != down_region.id and hit.is_swipe_endpoint:
            return TouchOutcome(OutcomeKind.SWIPE_COMPLETED, hit.id)
    if down_region.is_swipe_endpoint:
        return TouchOutcome(OutcomeKind.SWIPE_BROKEN, down_region.id)
    return TouchOutcome(OutcomeKind.MISS)


def _region_at(
    regions: Iterable[TargetRegion], pos_mm: tuple[float, float]
) -> TargetRegion | None:
    for region in regions:
        if region.contains(*pos_mm):
            return region
    return None


# --------------------------------------------------------------------------
# Scripted application


@dataclass(frozen=True)
class ScriptedApp:
    """Deterministic state machine standing in for real device software."""

    states: Mapping[str, tuple[TargetRegion, ...]]
    transitions: Mapping[tuple[str, str], str]
    initial: str

    def __post_init__(self) -> None:
        if self.initial not in self.states:
            raise ValueError(f"initial state {self.initial!r} is not declared")
        for (state, region_id), target in self.transitions.items():
            if state not in self.states:
                raise ValueError(f"transition from unknown state {state!r}")
            if target not in self.states:
                raise ValueError(f"transition to unknown state {target!r}")
            if region_id not in {r.id for r in self.states[state]}:
                raise ValueError(
                    f"transition from {state!r} references unknown region {region_id!r}"
                )

    def regions_of(self, state: str) -> tuple[TargetRegion, ...]:
        if state not in self.states:
            raise KeyError(f"unknown app state {state!r}")
        return self.states[state]

    def region(self, state: str, region_id: str) -> TargetRegion:
        for r in self.regions_of(state):
            if r.id == region_id:
                return r
        raise KeyError(f"state {state!r} has no region {region_id!r}")


def apply_touch(app: ScriptedApp, state: str, outcome: TouchOutcome) -> str:
    """Next app state after a classified touch. Misses never transition."""
    if state not in app.states:
        raise KeyError(f"unknown app state {state!r}")
    if outcome.kind in (OutcomeKind.HIT, OutcomeKind.SWIPE_COMPLETED):
        return app.transitions.get((state, outcome.region_id), state)
    return state


# --------------------------------------------------------------------------
# Scenario files

_SCREEN_KEYS = {"width_mm", "height_mm", "grid_pitch_mm", "refresh_hz", "tilt_deg"}
_REGION_KEYS = {"shape", "center_mm", "diameter_mm", "min_mm", "max_mm", "swipe_endpoint"}
_TOP_KEYS = {"screen", "states", "regions", "transitions", "initial"}


def _check_keys(obj: Mapping, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ScenarioError(f"unknown field(s) {sorted(unknown)} in {where}")


def _parse_region(region_id: str, obj: Mapping) -> TargetRegion:
    _check_keys(obj, _REGION_KEYS, f"region {region_id!r}")
    shape_kind = obj.get("shape")
    if shape_kind == "circle":
        shape: Circle | Rect = Circle(tuple(obj["center_mm"]), float(obj["diameter_mm"]))
    elif shape_kind == "rect":
        shape = Rect(tuple(obj["min_mm"]), tuple(obj["max_mm"]))
    else:
        raise ScenarioError(f"region {region_id!r}: shape must be 'circle' or 'rect'")
    return TargetRegion(region_id, shape, bool(obj.get("swipe_endpoint", False)))


def load_scenario(source: str | Path) -> tuple[ScreenSpec, ScriptedApp]:
    """Load a scenario file declaring the screen and the scripted app.

    ``source`` is a path or the JSON text itself. Unknown fields are
    rejected so fixture typos fail loudly.
    """
    text = source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and source.endswith(".json")):
        text = Path(source).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid scenario JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    _check_keys(doc, _TOP_KEYS, "scenario")
    screen_obj = doc.get("screen", {})
    _check_keys(screen_obj, _SCREEN_KEYS, "screen")
    screen = ScreenSpec(
        width_mm=float(screen_obj.get("width_mm", 66.0)),
        height_mm=float(screen_obj.get("height_mm", 148.0)),
        grid_pitch_mm=float(screen_obj.get("grid_pitch_mm", 1.25)),
        refresh_hz=float(screen_obj.get("refresh_hz", 10.0)),
    )
    tilt = float(screen_obj.get("tilt_deg", 0.0))
    if tilt:
        screen = screen.tilted(tilt)

    regions_doc = doc.get("regions", {})
    regions = {rid: _parse_region(rid, obj) for rid, obj in regions_doc.items()}
    for region in regions.values():
        region.validate_inside(screen)

    states_doc = doc.get("states")
    if not states_doc:
        raise ScenarioError("scenario must declare at least one state")
    states: dict[str, tuple[TargetRegion, ...]] = {}
    for state_id, region_ids in states_doc.items():
        missing = [rid for rid in region_ids if rid not in regions]
        if missing:
            raise ScenarioError(f"state {state_id!r} references unknown region(s) {missing}")
        states[state_id] = tuple(regions[rid] for rid in region_ids)

    transitions: dict[tuple[str, str], str] = {}
    for entry in doc.get("transitions", []):
        if len(entry) != 3:
            raise ScenarioError(f"transition entries must be [state, region, next]: {entry}")
        state, region_id, nxt = entry
        transitions[(state, region_id)] = nxt

    initial = doc.get("initial")
    if initial is None:
        raise ScenarioError("scenario must declare an initial state")
    try:
        app = ScriptedApp(states=states, transitions=transitions, initial=initial)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return screen, app
