"""Toy generative world: isotropic Gaussian-mixture targets with closed-form
scores, the linear-interpolation noising process, a few-step MLP generator,
and the conditioning unit that packs prompt/frames/masks for video-style
tasks on flattened frame trajectories.

Noising convention: x_t = (1 - t) * x0 + t * z with z ~ N(0, I) and
t in [0, 1]. Under it a mixture component N(mu, s^2 I) moves to
N((1-t) mu, ((1-t)^2 s^2 + t^2) I), so the noised target stays a mixture
with the same weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from . import nn_core as nc
from .nn_core import Var, check_finite

# ---------------------------------------------------------------------------
# mixture targets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixture:
    """Isotropic Gaussian mixture: component k is N(means[k], variances[k] I)."""

    weights: np.ndarray    # (K,) positive, sums to 1
    means: np.ndarray      # (K, D)
    variances: np.ndarray  # (K,) strictly positive

    def __post_init__(self):
        w = np.asarray(self.weights, np.float64)
        m = np.asarray(self.means, np.float64)
        v = np.asarray(self.variances, np.float64)
        if w.ndim != 1 or m.ndim != 2 or v.ndim != 1:
            raise ValueError("weights (K,), means (K,D), variances (K,) expected")
        if not (len(w) == len(m) == len(v)) or len(w) == 0:
            raise ValueError("component counts disagree")
        if np.any(w <= 0) or abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(v <= 0):
            raise ValueError("variances must be strictly positive")
        check_finite(m, "means")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def noised(self, t: float) -> "GaussianMixture":
        """Mixture of x_t = (1-t) x0 + t z. Valid on all of [0, 1]; at t = 1
        every component collapses onto N(0, I)."""
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must lie in [0, 1], got {t}")
        a = 1.0 - t
        return GaussianMixture(
            self.weights.copy(),
            a * self.means,
            a * a * self.variances + t * t,
        )


def gm_sample(gm: GaussianMixture, n: int, rng) -> np.ndarray:
    """Draw n samples: component by weight, then the Gaussian."""
    comp = rng.choice(gm.n_components, size=n, p=gm.weights)
    z = rng.standard_normal((n, gm.dim))
    return gm.means[comp] + np.sqrt(gm.variances)[comp, None] * z


def _component_logpdfs(gm: GaussianMixture, x: np.ndarray) -> np.ndarray:
    # (N, K) array of log w_k + log N(x_i; mu_k, s_k^2 I)
    d2 = ((x[:, None, :] - gm.means[None, :, :]) ** 2).sum(axis=2)  # (N, K)
    return (
        np.log(gm.weights)[None, :]
        - 0.5 * d2 / gm.variances[None, :]
        - 0.5 * gm.dim * np.log(2.0 * np.pi * gm.variances)[None, :]
    )


def _as_batch(x):
    x = np.asarray(x, np.float64)
    squeeze = x.ndim == 1
    return (x[None, :] if squeeze else x), squeeze


def gm_logpdf(gm: GaussianMixture, x):
    """Log density, batched over rows of x."""
    xb, squeeze = _as_batch(x)
    out = logsumexp(_component_logpdfs(gm, xb), axis=1)
    return float(out[0]) if squeeze else out


def gm_score(gm: GaussianMixture, x):
    """Gradient of the log density: sum_k gamma_k(x) (mu_k - x) / s_k^2 with
    gamma the posterior component responsibilities."""
    xb, squeeze = _as_batch(x)
    gamma = softmax(_component_logpdfs(gm, xb), axis=1)        # (N, K)
    pull = (gm.means[None, :, :] - xb[:, None, :]) / gm.variances[None, :, None]
    s = (gamma[:, :, None] * pull).sum(axis=1)
    return s[0] if squeeze else s


def gm_score_jacobian(gm: GaussianMixture, x):
    """Hessian of the log density at each row of x, shape (N, D, D):

        H = sum_k gamma_k (u_k u_k^T - I / s_k^2) - s s^T,   u_k = (mu_k - x)/s_k^2,

    where s is the score. Exact Jacobian of `gm_score`, used for
    vector-Jacobian products through the frozen teacher."""
    xb, squeeze = _as_batch(x)
    gamma = softmax(_component_logpdfs(gm, xb), axis=1)
    u = (gm.means[None, :, :] - xb[:, None, :]) / gm.variances[None, :, None]  # (N,K,D)
    s = (gamma[:, :, None] * u).sum(axis=1)                                    # (N,D)
    H = np.einsum("nk,nka,nkb->nab", gamma, u, u)
    H -= np.einsum("na,nb->nab", s, s)
    trace_term = (gamma / gm.variances[None, :]).sum(axis=1)                   # (N,)
    H -= trace_term[:, None, None] * np.eye(gm.dim)[None, :, :]
    return H[0] if squeeze else H


def gm_ring(modes: int, radius: float, sigma: float, frames: int = 1) -> GaussianMixture:
    """Equal-weight modes on a circle, the 2-d layout repeated across frames
    (static toy videos). modes=2 gives the far-separated bimodal target."""
    if modes < 1 or radius <= 0 or sigma <= 0 or frames < 1:
        raise ValueError("modes/frames >= 1 and radius/sigma > 0 required")
    ang = 2.0 * np.pi * np.arange(modes) / modes
    base = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    means = np.tile(base, (1, frames))
    return GaussianMixture(np.full(modes, 1.0 / modes), means, np.full(modes, sigma ** 2))


def gm_grid(rows: int, cols: int, spacing: float, sigma: float, frames: int = 1) -> GaussianMixture:
    """Equal-weight modes on a centred rows x cols lattice, repeated across
    frames."""
    if rows < 1 or cols < 1 or spacing <= 0 or sigma <= 0 or frames < 1:
        raise ValueError("rows/cols/frames >= 1 and spacing/sigma > 0 required")
    ys = spacing * (np.arange(rows) - (rows - 1) / 2.0)
    xs = spacing * (np.arange(cols) - (cols - 1) / 2.0)
    base = np.array([[x, y] for y in ys for x in xs])
    means = np.tile(base, (1, frames))
    k = rows * cols
    return GaussianMixture(np.full(k, 1.0 / k), means, np.full(k, sigma ** 2))


TARGET_SPEC_KEYS = {
    "gm_ring": {"type", "modes", "radius", "sigma"},
    "gm_grid": {"type", "rows", "cols", "spacing", "sigma"},
}


def build_target(spec: dict, frames: int = 1) -> GaussianMixture:
    """Parse a target-family spec like {"type": "gm_ring", "modes": 8,
    "radius": 4.0, "sigma": 0.2}. Unknown types and keys are rejected."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ValueError("target spec must be a dict with a 'type' key")
    kind = spec["type"]
    if kind not in TARGET_SPEC_KEYS:
        raise ValueError(f"unknown target type {kind!r}")
    extra = set(spec) - TARGET_SPEC_KEYS[kind]
    if extra:
        raise ValueError(f"unknown target spec key {sorted(extra)[0]!r}")
    missing = TARGET_SPEC_KEYS[kind] - set(spec)
    if missing:
        raise ValueError(f"target spec missing key {sorted(missing)[0]!r}")
    if kind == "gm_ring":
        return gm_ring(int(spec["modes"]), float(spec["radius"]), float(spec["sigma"]), frames)
    return gm_grid(int(spec["rows"]), int(spec["cols"]), float(spec["spacing"]),
                   float(spec["sigma"]), frames)


# ---------------------------------------------------------------------------
# noising and the denoiser/score bridge
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoisySample:
    x0: np.ndarray
    z: np.ndarray
    t: float
    x_t: np.ndarray


def add_noise(x0, t: float, z) -> NoisySample:
    """x_t = (1 - t) x0 + t z for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x0 = np.asarray(x0, np.float64)
    z = np.asarray(z, np.float64)
    if x0.shape != z.shape:
        raise ValueError("x0 and z shapes differ")
    return NoisySample(x0, z, float(t), (1.0 - t) * x0 + t * z)


def denoiser_to_score(x0_pred, x_t, t: float):
    """Turn a posterior-mean denoiser output into the marginal score:

        score(x_t) = ((1 - t) * x0_pred - x_t) / t^2.

    Exact when x0_pred = E[x0 | x_t] (Tweedie for the linear noising above).
    Runs traced or untraced; t = 0 has no defined score here and is rejected.
    """
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must lie in (0, 1], got {t}")
    inv_t2 = 1.0 / (t * t)
    return x0_pred * ((1.0 - t) * inv_t2) - x_t * inv_t2


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing rollout times in (0, 1], starting at 1.0."""

    steps: tuple

    def __post_init__(self):
        steps = tuple(float(t) for t in self.steps)
        if not steps:
            raise ValueError("schedule needs at least one step")
        if steps[0] != 1.0:
            raise ValueError("schedule must start at t = 1.0 (pure noise)")
        for a, b in zip(steps, steps[1:]):
            if not a > b:
                raise ValueError("schedule must be strictly decreasing")
        if steps[-1] <= 0.0:
            raise ValueError("schedule steps must stay in (0, 1]")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)


DEFAULT_SCHEDULE = NoiseSchedule((1.0, 0.75, 0.5, 0.25))


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RolloutStep:
    t: float
    x_t: np.ndarray
    x0_pred: np.ndarray


def _tile_rows(vec, n):
    return np.tile(np.asarray(vec, np.float64)[None, :], (n, 1))


def generator_input(x, t: float, cond, temb_dim: int):
    """Concatenate [x_t, time embedding, condition] row-wise; x may be a Var."""
    n = x.shape[0]
    parts = [x, _tile_rows(nc.time_embedding(t, temb_dim), n)]
    cond = np.asarray(cond, np.float64)
    if cond.size:
        parts.append(_tile_rows(cond, n))
    return nc.concat(parts, axis=1)


def score_net_input(x, t: float, temb_dim: int):
    """Concatenate [x_t, time embedding] row-wise; x may be a Var."""
    return nc.concat([x, _tile_rows(nc.time_embedding(t, temb_dim), x.shape[0])], axis=1)


def generator_rollout(weights, biases, z, cond, schedule: NoiseSchedule, rng,
                      temb_dim: int = 8):
    """Few-step sampling: start at pure noise x_1 = z, predict x0 at each
    schedule time, re-noise to the next time with fresh noise, and return the
    final prediction plus the per-step trace.

    weights/biases may be ndarrays (plain sampling) or Vars (training: the
    final x0 stays differentiable; fresh noise enters as constants).
    """
    z = np.asarray(z, np.float64)
    if z.ndim != 2:
        raise ValueError("z must be (batch, dim)")
    steps = schedule.steps
    x_t = z
    trace = []
    x0_pred = None
    for i, t in enumerate(steps):
        inp = generator_input(x_t, t, cond, temb_dim)
        x0_pred = nc.mlp_forward(weights, biases, inp)
        trace.append(RolloutStep(
            t,
            x_t.value.copy() if isinstance(x_t, Var) else np.array(x_t),
            x0_pred.value.copy() if isinstance(x0_pred, Var) else np.array(x0_pred),
        ))
        if i + 1 < len(steps):
            t_next = steps[i + 1]
            fresh = rng.standard_normal(z.shape)
            x_t = x0_pred * (1.0 - t_next) + t_next * fresh
    return x0_pred, trace


def rollout_sample(params: nc.MlpParams, z, cond, schedule: NoiseSchedule, rng,
                   temb_dim: int = 8) -> np.ndarray:
    """Untraced convenience wrapper returning plain samples."""
    x0, _ = generator_rollout(list(params.weights), list(params.biases), z, cond,
                              schedule, rng, temb_dim)
    return x0


def denoising_loss(weights, biases, x_t, t: float, x0_target, temb_dim: int = 8):
    """Mean squared denoising error over batch and dims:
    mean( (F(x_t, t) - x0)^2 ). Traced when the net weights are Vars."""
    pred = nc.mlp_forward(weights, biases, score_net_input(x_t, t, temb_dim))
    diff = pred - x0_target
    return diff.square().mean() if isinstance(diff, Var) else float(np.mean(diff ** 2))


# ---------------------------------------------------------------------------
# conditioning units
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vcu:
    """Conditioning unit: prompt embedding, context frames, per-frame masks
    (mask 1 = frame is to be generated, 0 = frame is given as context)."""

    prompt: np.ndarray  # (P,)
    frames: np.ndarray  # (L, D) context/video frames
    masks: np.ndarray   # (L,) in {0, 1}

    def __post_init__(self):
        p = np.asarray(self.prompt, np.float64)
        f = np.asarray(self.frames, np.float64)
        m = np.asarray(self.masks, np.float64)
        if p.ndim != 1 or f.ndim != 2 or m.ndim != 1:
            raise ValueError("prompt (P,), frames (L,D), masks (L,) expected")
        if f.shape[0] != m.shape[0]:
            raise ValueError("frames and masks lengths differ")
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError("masks must be 0/1")
        check_finite(p, "prompt")
        check_finite(f, "frames")
        object.__setattr__(self, "prompt", p)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "masks", m)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def frame_dim(self):
        return self.frames.shape[1]


def build_vcu(task: str, prompt, n_frames: int, frame_dim: int,
              ref_frames=None, frames=None, masks=None) -> Vcu:
    """Assemble the conditioning unit for one of the four task shapes:

    - "t2v":  frames all zero, masks all one (generate everything)
    - "r2v":  reference frames prepended as context (mask 0), then n_frames
              zero frames to generate (mask 1)
    - "v2v":  given frames with masks all one (regenerate guided by them)
    - "mv2v": frames and masks passed through as given
    """
    prompt = np.asarray(prompt, np.float64)
    if task == "t2v":
        return Vcu(prompt, np.zeros((n_frames, frame_dim)), np.ones(n_frames))
    if task == "r2v":
        if ref_frames is None:
            raise ValueError("r2v needs ref_frames")
        ref = np.asarray(ref_frames, np.float64).reshape(-1, frame_dim)
        body = np.zeros((n_frames, frame_dim))
        return Vcu(prompt, np.concatenate([ref, body], axis=0),
                   np.concatenate([np.zeros(len(ref)), np.ones(n_frames)]))
    if task == "v2v":
        if frames is None:
            raise ValueError("v2v needs frames")
        f = np.asarray(frames, np.float64).reshape(n_frames, frame_dim)
        return Vcu(prompt, f, np.ones(n_frames))
    if task == "mv2v":
        if frames is None or masks is None:
            raise ValueError("mv2v needs frames and masks")
        return Vcu(prompt, np.asarray(frames, np.float64).reshape(-1, frame_dim),
                   np.asarray(masks, np.float64))
    raise ValueError(f"unknown task {task!r}")


def encode_condition(vcu: Vcu) -> np.ndarray:
    """Deterministic flat encoding: [prompt; frames masked to context only
    (each frame times (1 - mask)); masks]. Identical units encode
    identically; mask flips change the encoding."""
    kept = vcu.frames * (1.0 - vcu.masks)[:, None]
    return np.concatenate([vcu.prompt, kept.reshape(-1), vcu.masks])
