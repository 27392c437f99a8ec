"""Feed-forward stochastic control policy with hand-written gradients.

The network is a two-hidden-layer tanh MLP over the observation vector with
a tanh mean head (control means in [-1, 1]), a value head sharing the trunk,
and a state-independent log-std vector clamped to [-5, 1]. Everything is
float64 numpy so the analytic gradients of the clipped-surrogate objective
can be validated against central finite differences to tight tolerances.

Observations are multiplied by a fixed per-feature scale (part of the
parameters, not learned) so positions, distances and widths land near unit
range; values are learned in units of ``value_scale`` to keep the value loss
well conditioned against thousand-scale returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0

_LOG_2PI = float(np.log(2.0 * np.pi))


def obs_scale_for(act_dim: int) -> np.ndarray:
    """Fixed feature scaling for the gesture-environment observation layout."""
    return np.concatenate(
        [
            np.ones(act_dim),        # activations
            np.full(3, 10.0),        # fingertip position (m)
            np.ones(3),              # fingertip velocity (m/s)
            np.full(3, 10.0),        # target position (m)
            [10.0],                  # fingertip-target distance (m)
            [0.1],                   # target width (mm)
            np.ones(3),              # contact one-hot
            np.ones(act_dim),        # fatigue
            np.ones(4),              # operator one-hot
        ]
    )


@dataclass
class PolicyParams:
    """Learnable arrays plus fixed conditioning constants."""

    weights: dict[str, np.ndarray]
    obs_scale: np.ndarray
    value_scale: float
    obs_dim: int
    act_dim: int
    hidden: int
    seed: int

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            weights={k: v.copy() for k, v in self.weights.items()},
            obs_scale=self.obs_scale.copy(),
            value_scale=self.value_scale,
            obs_dim=self.obs_dim,
            act_dim=self.act_dim,
            hidden=self.hidden,
            seed=self.seed,
        )

    @property
    def log_std(self) -> np.ndarray:
        return np.clip(self.weights["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.weights[k].ravel() for k in sorted(self.weights)])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for k in sorted(self.weights):
            n = self.weights[k].size
            self.weights[k] = flat[i : i + n].reshape(self.weights[k].shape).copy()
            i += n


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(rows, cols))
    u, _, vt = np.linalg.svd(a, full_matrices=False)
    q = u if u.shape == (rows, cols) else vt
    return gain * q


def init_policy(
    obs_dim: int,
    act_dim: int,
    hidden: int = 64,
    seed: int = 0,
    value_scale: float = 1000.0,
    init_log_std: float = -0.5,
    obs_scale: np.ndarray | None = None,
) -> PolicyParams:
    rng = np.random.default_rng(seed)
    weights = {
        "w1": _orthogonal(rng, obs_dim, hidden, np.sqrt(2.0)),
        "b1": np.zeros(hidden),
        "w2": _orthogonal(rng, hidden, hidden, np.sqrt(2.0)),
        "b2": np.zeros(hidden),
        "wm": _orthogonal(rng, hidden, act_dim, 0.01),
        "bm": np.zeros(act_dim),
        "wv": _orthogonal(rng, hidden, 1, 1.0),
        "bv": np.zeros(1),
        "log_std": np.full(act_dim, init_log_std),
    }
    if obs_scale is None:
        obs_scale = np.ones(obs_dim)
    if obs_scale.shape != (obs_dim,):
        raise ValueError("obs_scale must match the observation dimension")
    for k, v in weights.items():
        weights[k] = np.asarray(v, dtype=np.float64)
    return PolicyParams(
        weights=weights,
        obs_scale=np.asarray(obs_scale, dtype=np.float64),
        value_scale=value_scale,
        obs_dim=obs_dim,
        act_dim=act_dim,
        hidden=hidden,
        seed=seed,
    )


def forward(params: PolicyParams, obs: np.ndarray):
    """Batched forward pass: means, scaled values, and the backprop cache."""
    w = params.weights
    x = np.atleast_2d(np.asarray(obs, dtype=np.float64)) * params.obs_scale
    h1 = np.tanh(x @ w["w1"] + w["b1"])
    h2 = np.tanh(h1 @ w["w2"] + w["b2"])
    mu = np.tanh(h2 @ w["wm"] + w["bm"])
    value = (h2 @ w["wv"] + w["bv"])[:, 0]
    cache = (x, h1, h2, mu)
    return mu, value, cache


def mean_action(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    mu, _, _ = forward(params, obs)
    return mu[0] if np.asarray(obs).ndim == 1 else mu


def sample_actions(
    params: PolicyParams, obs: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample Gaussian actions; returns (actions, log_probs, values)."""
    mu, value, _ = forward(params, obs)
    std = np.exp(params.log_std)
    actions = mu + std * rng.standard_normal(mu.shape)
    logp = log_prob(params, mu, actions)
    return actions, logp, value * params.value_scale


def log_prob(params: PolicyParams, mu: np.ndarray, actions: np.ndarray) -> np.ndarray:
    ls = params.log_std
    z = (actions - mu) / np.exp(ls)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(ls) - 0.5 * mu.shape[-1] * _LOG_2PI


def entropy(params: PolicyParams) -> float:
    return float(np.sum(params.log_std) + 0.5 * params.act_dim * (1.0 + _LOG_2PI))


def loss_and_grad(
    params: PolicyParams,
    obs: np.ndarray,
    actions: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    value_targets: np.ndarray,
    clip_eps: float = 0.2,
    vf_coef: float = 0.5,
    ent_coef: float = 0.0,
):
    """Clipped-surrogate loss with analytic gradients.

    ``value_targets`` are raw returns; they are converted to the learned
    value scale internally. Set ``vf_coef`` and ``ent_coef`` to zero to get
    the pure policy surrogate (the form the finite-difference check uses).
    """
    w = params.weights
    n = obs.shape[0]
    mu, value, (x, h1, h2, _) = forward(params, obs)
    ls = params.log_std
    std = np.exp(ls)
    z = (actions - mu) / std
    logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(ls) - 0.5 * mu.shape[-1] * _LOG_2PI

    ratio = np.exp(logp - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    take_unclipped = unclipped <= clipped
    surrogate = np.where(take_unclipped, unclipped, clipped)
    policy_loss = -float(np.mean(surrogate))

    v_targets = np.asarray(value_targets, dtype=np.float64) / params.value_scale
    v_err = value - v_targets
    value_loss = 0.5 * float(np.mean(v_err * v_err))

    ent = np.sum(ls) + 0.5 * params.act_dim * (1.0 + _LOG_2PI)
    loss = policy_loss + vf_coef * value_loss - ent_coef * float(ent)

    # -- backward ---------------------------------------------------------
    # d(policy_loss)/d(logp): only where the unclipped branch is selected.
    dlogp = -(take_unclipped * ratio * advantages) / n
    dmu = dlogp[:, None] * (z / std)
    dz_mean = dmu * (1.0 - mu * mu)

    dvalue = vf_coef * v_err / n
    dz_val = dvalue[:, None]

    grads = {
        "wm": h2.T @ dz_mean,
        "bm": dz_mean.sum(axis=0),
        "wv": h2.T @ dz_val,
        "bv": dz_val.sum(axis=0),
    }
    dh2 = dz_mean @ w["wm"].T + dz_val @ w["wv"].T
    dz2 = dh2 * (1.0 - h2 * h2)
    grads["w2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ w["w2"].T
    dz1 = dh1 * (1.0 - h1 * h1)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)

    # log-std gradient: policy term plus entropy bonus, zero where clamped.
    dlogp_dls = z * z - 1.0
    g_ls = np.sum(dlogp[:, None] * dlogp_dls, axis=0) - ent_coef
    interior = (params.weights["log_std"] > LOG_STD_MIN) & (
        params.weights["log_std"] < LOG_STD_MAX
    )
    grads["log_std"] = np.where(interior, g_ls, 0.0)

    stats = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": float(ent),
        "clip_fraction": float(np.mean(~take_unclipped)),
        "approx_kl": float(np.mean(logp_old - logp)),
    }
    return loss, grads, stats


@dataclass
class AdamState:
    """Per-parameter Adam moments."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: PolicyParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    max_grad_norm: float | None = 0.5,
) -> None:
    if max_grad_norm is not None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > max_grad_norm:
            scale = max_grad_norm / (total + 1e-12)
            grads = {k: g * scale for k, g in grads.items()}
    state.t += 1
    t = state.t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        m_hat = state.m[k] / (1 - beta1**t)
        v_hat = state.v[k] / (1 - beta2**t)
        params.weights[k] = params.weights[k] - lr * m_hat / (np.sqrt(v_hat) + eps)
