"""Shaped, terminal-constrained per-step reward for all motor operators.

Episode returns are anchored by a dominant terminal payoff (+1000 success,
-1000 timeout or broken swipe). Intermediate shaping components each live in
[-1, 0] and are scaled so the cumulative shaping over any episode can never
exceed half the terminal magnitude, giving a provable episode-return bound
of [-1500, +1000].

A three-stage curriculum gates which components are active: stage 1 shapes
distance only, stage 2 adds the touch-error penalty, stage 3 adds the
activation and jerk penalties. Swipes never receive the error penalty but
carry a contact-break penalty in every stage.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

#: Jerk magnitude (m/s^3) that maps to the full jerk penalty.
JERK_REF = 5000.0


class Stage(Enum):
    S1 = 1
    S2 = 2
    S3 = 3


class EpisodeOutcome(Enum):
    SUCCESS = "success"
    TIMEOUT = "timeout"
    SWIPE_BROKEN = "swipe_broken"


@dataclass(frozen=True)
class RewardWeights:
    w_dist: float = 1.0
    w_activation: float = 10.0
    w_error: float = 10.0
    w_jerk: float = 1.0
    w_contact: float = 10.0
    terminal: float = 1000.0
    stage: Stage = Stage.S3
    t_max_steps: int = 200

    def __post_init__(self) -> None:
        for name in ("w_dist", "w_activation", "w_error", "w_jerk", "w_contact"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.terminal <= 0:
            raise ValueError("terminal must be positive")
        if self.t_max_steps <= 0:
            raise ValueError("t_max_steps must be positive")

    def at_stage(self, stage: Stage) -> "RewardWeights":
        return replace(self, stage=stage)

    def with_t_max(self, t_max_steps: int) -> "RewardWeights":
        return replace(self, t_max_steps=t_max_steps)


def active_weights(weights: RewardWeights, swipe: bool) -> dict[str, float]:
    """Component weights active for the current stage and operator family."""
    active = {"dist": weights.w_dist}
    if swipe:
        active["contact"] = weights.w_contact
    elif weights.stage in (Stage.S2, Stage.S3):
        active["error"] = weights.w_error
    if weights.stage is Stage.S3:
        active["activation"] = weights.w_activation
        active["jerk"] = weights.w_jerk
    return active


def shaping_scale(weights: RewardWeights, swipe: bool) -> float:
    """Per-step scale keeping cumulative shaping within half the terminal."""
    total_w = sum(active_weights(weights, swipe).values())
    return (weights.terminal / 2.0) / (weights.t_max_steps * total_w)


@dataclass(frozen=True)
class StepReward:
    """Reward for one environment step.

    ``components`` holds the unweighted shaping terms, each in [-1, 0];
    ``shaping_total`` is their weighted, scaled sum; ``terminal`` is nonzero
    only on the final step. ``total`` is what a learner consumes.
    """

    components: dict[str, float]
    shaping_total: float
    terminal: float = 0.0

    @property
    def total(self) -> float:
        return self.shaping_total + self.terminal


def shaping(
    *,
    distance: float,
    d_ref: float,
    activations: np.ndarray,
    jerk_mag: float,
    miss_event: bool,
    contact_break: bool,
    weights: RewardWeights,
    swipe: bool,
) -> StepReward:
    """Per-step shaping reward from raw movement quantities.

    ``distance`` and ``d_ref`` (the episode's initial fingertip-target
    distance) share any length unit; ``jerk_mag`` is in m/s^3. The error
    component fires on a touch-down outside the target, the contact
    component on a broken swipe contact.
    """
    if d_ref <= 0:
        d_ref = 1e-9
    components = {
        "dist": -min(distance / d_ref, 1.0),
        "activation": -float(np.mean(np.square(activations))),
        "error": -1.0 if miss_event else 0.0,
        "jerk": -min(abs(jerk_mag) / JERK_REF, 1.0),
        "contact": -1.0 if contact_break else 0.0,
    }
    active = active_weights(weights, swipe)
    scale = shaping_scale(weights, swipe)
    total = scale * sum(w * components[name] for name, w in active.items())
    return StepReward(components=components, shaping_total=total)


def terminal(outcome: EpisodeOutcome, weights: RewardWeights) -> float:
    """Terminal payoff: success earns the bonus, any failure its negative."""
    if outcome is EpisodeOutcome.SUCCESS:
        return weights.terminal
    return -weights.terminal


def return_bounds(weights: RewardWeights) -> tuple[float, float]:
    """Provable bounds on any episode return under this weighting."""
    return (-1.5 * weights.terminal, weights.terminal)
