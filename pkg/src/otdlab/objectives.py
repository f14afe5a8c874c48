"""Training objectives for distribution matching with a transport term and a
relative adversarial critic.

The two score-matching losses share one trick: the wanted gradient g for the
generator output x is precomputed (detached), and the scalar loss
mean((x - stop_grad(x - g))^2) is built so its gradient in x is exactly
2 g / N. The transport gradient comes from the envelope form: the plan of the
entropic solve is held fixed while the cost is differentiated through both
score functions at the shared noised samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import gen_model as gmod
from . import nn_core as nc
from . import ot_core as ot
from .nn_core import Var


@dataclass(frozen=True)
class ScoreBatch:
    """Scores evaluated at a shared batch of points, tagged by origin."""

    scores: np.ndarray  # (N, D)
    source: str         # "fake" | "real"

    def __post_init__(self):
        s = np.asarray(self.scores, np.float64)
        if s.ndim != 2:
            raise ValueError("scores must be (N, D)")
        nc.check_finite(s, "scores")
        object.__setattr__(self, "scores", s)


def _score_array(x):
    return x.scores if isinstance(x, ScoreBatch) else np.asarray(x, np.float64)


def kl_gradient(real_scores, fake_scores) -> np.ndarray:
    """Pointwise reverse-KL direction: s_fake(x) - s_real(x).

    Both batches must be evaluated at the same points, row for row.
    """
    r = _score_array(real_scores)
    f = _score_array(fake_scores)
    if r.shape != f.shape:
        raise ValueError(f"score batches disagree: {r.shape} vs {f.shape}")
    return f - r


def _pull_gradient_loss(x0_hat, g):
    if isinstance(g, Var):
        raise TypeError("gradient g must be detached (plain array, not a Var)")
    g = np.asarray(g, np.float64)
    nc.check_finite(g, "loss gradient")
    if isinstance(x0_hat, Var):
        if x0_hat.shape != g.shape:
            raise ValueError(f"x0_hat {x0_hat.shape} vs gradient {g.shape}")
        target = x0_hat.graph.constant(x0_hat.value - g)
        return (x0_hat - target).square().mean()
    x0_hat = np.asarray(x0_hat, np.float64)
    if x0_hat.shape != g.shape:
        raise ValueError(f"x0_hat {x0_hat.shape} vs gradient {g.shape}")
    return float(np.mean((x0_hat - (x0_hat - g)) ** 2))


def dmd_loss(x0_hat, g):
    """Scalar surrogate whose x0_hat-gradient is 2 g / N for the detached
    reverse-KL direction g; its value is mean(g^2)."""
    return _pull_gradient_loss(x0_hat, g)


def otd_loss(x0_hat, g):
    """Same surrogate construction for the detached transport direction g."""
    return _pull_gradient_loss(x0_hat, g)


# ---------------------------------------------------------------------------
# score functions: value + vector-Jacobian product at shared points
# ---------------------------------------------------------------------------


class AnalyticMixtureScore:
    """Frozen teacher: closed-form score of the noised target mixture, with
    the exact log-density Hessian providing vector-Jacobian products. Carries
    no trainable parameters, so no gradient can reach the target."""

    source = "real"

    def __init__(self, mixture: gmod.GaussianMixture, t: float):
        self.noised = mixture.noised(t)
        self.t = float(t)

    def __call__(self, x) -> np.ndarray:
        return gmod.gm_score(self.noised, np.asarray(x, np.float64))

    def vjp(self, x, v) -> np.ndarray:
        x = np.asarray(x, np.float64)
        v = np.asarray(v, np.float64)
        if x.shape != v.shape:
            raise ValueError("x and v shapes differ")
        H = gmod.gm_score_jacobian(self.noised, x)  # (N, D, D), symmetric
        return np.einsum("nab,nb->na", H, v)


class DenoiserScore:
    """Student: denoiser MLP output turned into a score of the noised fake
    distribution; vector-Jacobian products run through the autodiff tape with
    the net weights held constant."""

    source = "fake"

    def __init__(self, params: nc.MlpParams, t: float, temb_dim: int = 8):
        self.params = params
        self.t = float(t)
        self.temb_dim = temb_dim

    def _score(self, x):
        ws, bs = list(self.params.weights), list(self.params.biases)
        pred = nc.mlp_forward(ws, bs, gmod.score_net_input(x, self.t, self.temb_dim))
        return gmod.denoiser_to_score(pred, x, self.t)

    def __call__(self, x) -> np.ndarray:
        return self._score(np.asarray(x, np.float64))

    def vjp(self, x, v) -> np.ndarray:
        return nc.vjp(self._score, x, v)


@dataclass(frozen=True)
class OtdGradient:
    """Detached transport gradient at the noised samples, plus solve stats."""

    grad: np.ndarray       # (N, D)
    value: float           # entropic objective at the plan
    transport_cost: float  # <D, T>
    iterations: int
    converged: bool        # False marks the gradient as stale


def otd_gradient(x_t, fake_score, real_score,
                 epsilon: float = ot.DEFAULT_EPSILON,
                 tol: float = ot.DEFAULT_TOL,
                 max_iter: int = ot.DEFAULT_MAX_ITER) -> OtdGradient:
    """Gradient of the entropic transport discrepancy between the fake and
    real score clouds, evaluated at shared samples x_t.

    The plan is solved once and frozen (envelope form); each point then feels
    the cost gradient through both score functions:

        grad_i = vjp_fake(x_t, dW/da)_i + vjp_real(x_t, dW/db)_i.

    The result is detached. A truncated solve is returned with
    converged=False so the caller can skip the stale direction.
    """
    x_t = np.asarray(x_t, np.float64)
    a = np.asarray(fake_score(x_t), np.float64)
    b = np.asarray(real_score(x_t), np.float64)
    if a.shape != x_t.shape or b.shape != x_t.shape:
        raise ValueError("score functions must map (N,D) to (N,D)")
    D = ot.pairwise_half_sq_euclidean(a, b)
    sol = ot.sinkhorn_log(D, epsilon=epsilon, tol=tol, max_iter=max_iter)
    ga, gb = ot.grad_wrt_samples(a, b, sol.plan)
    grad = fake_score.vjp(x_t, ga) + real_score.vjp(x_t, gb)
    return OtdGradient(grad, sol.value, sol.transport_cost, sol.iterations, sol.converged)


# ---------------------------------------------------------------------------
# relative adversarial pair
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscriminatorParams:
    """Critic head over tapped hidden activations of the fake score net:
    per-tap linear projections, concatenated with a sinusoidal time
    embedding, then one linear layer to a logit."""

    taps: tuple                 # hidden-layer indices into the tapped net
    projections: tuple          # one single-layer linear MlpParams per tap
    head: nc.MlpParams          # single-layer linear to width 1
    temb_dim: int = 8

    def __post_init__(self):
        if len(self.taps) != len(self.projections) or not self.taps:
            raise ValueError("one projection per tap required")
        if any(len(p.weights) != 1 for p in self.projections):
            raise ValueError("projections must be single linear layers")
        if len(self.head.weights) != 1 or self.head.widths[-1] != 1:
            raise ValueError("head must be one linear layer with scalar output")

    def param_list(self):
        out = []
        for p in self.projections:
            out.extend(p.param_list())
        out.extend(self.head.param_list())
        return out

    def with_param_list(self, params):
        projs = []
        k = 0
        for p in self.projections:
            projs.append(p.with_param_list(params[k:k + 2]))
            k += 2
        head = self.head.with_param_list(params[k:k + 2])
        return DiscriminatorParams(self.taps, tuple(projs), head, self.temb_dim)


def init_discriminator(rng, feature_width: int, taps=(1, 2, 3), proj_dim: int = 16,
                       temb_dim: int = 8) -> DiscriminatorParams:
    """Projections are random; the head starts at zero so every logit is 0
    before training."""
    projs = tuple(nc.init_mlp([feature_width, proj_dim], rng) for _ in taps)
    head = nc.init_mlp([proj_dim * len(taps) + temb_dim, 1], rng, zero_final=True)
    return DiscriminatorParams(tuple(taps), projs, head, temb_dim)


def lift_discriminator(graph, disc: DiscriminatorParams, trainable=True):
    """Enter critic weights onto a tape; returns (proj (W,b) pairs, head
    (W,b), leaf list)."""
    enter = graph.leaf if trainable else graph.constant
    pairs = [(enter(p.weights[0]), enter(p.biases[0])) for p in disc.projections]
    head = (enter(disc.head.weights[0]), enter(disc.head.biases[0]))
    leaves = []
    if trainable:
        for w, b in pairs:
            leaves.extend([w, b])
        leaves.extend(head)
    return pairs, head, leaves


def discriminator_forward(proj_pairs, head_pair, taps, hidden_acts, t: float,
                          temb_dim: int = 8):
    """Logits (N, 1) from tapped hidden activations. Activations and weights
    may be Vars (either side of the adversarial game) or plain arrays."""
    if max(taps) >= len(hidden_acts):
        raise ValueError(f"tap {max(taps)} out of range for {len(hidden_acts)} hidden layers")
    n = hidden_acts[taps[0]].shape[0]
    feats = [nc.matmul(hidden_acts[i], w) + b for (w, b), i in zip(proj_pairs, taps)]
    feats.append(np.tile(nc.time_embedding(t, temb_dim)[None, :], (n, 1)))
    x = nc.concat(feats, axis=1)
    return nc.matmul(x, head_pair[0]) + head_pair[1]


def disc_apply(disc: DiscriminatorParams, hidden_acts, t: float):
    """Untraced logits on plain activations."""
    pairs = [(p.weights[0], p.biases[0]) for p in disc.projections]
    head = (disc.head.weights[0], disc.head.biases[0])
    return discriminator_forward(pairs, head, disc.taps, hidden_acts, t, disc.temb_dim)


def disc_to_doc(disc: DiscriminatorParams) -> dict:
    """JSON document for the critic head; embeds one net doc per part."""
    return {
        "format_version": nc.CHECKPOINT_FORMAT_VERSION,
        "taps": [int(i) for i in disc.taps],
        "temb_dim": disc.temb_dim,
        "projections": [nc.mlp_to_doc(p) for p in disc.projections],
        "head": nc.mlp_to_doc(disc.head),
    }


def disc_from_doc(doc: dict) -> DiscriminatorParams:
    version = doc.get("format_version")
    if version != nc.CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unknown checkpoint format_version: {version!r}")
    return DiscriminatorParams(
        tuple(int(i) for i in doc["taps"]),
        tuple(nc.mlp_from_doc(p) for p in doc["projections"]),
        nc.mlp_from_doc(doc["head"]),
        int(doc["temb_dim"]),
    )


def save_discriminator(path, disc: DiscriminatorParams):
    with open(path, "w") as f:
        json.dump(disc_to_doc(disc), f)
        f.write("\n")


def load_discriminator(path) -> DiscriminatorParams:
    with open(path) as f:
        return disc_from_doc(json.load(f))


def _mean_margin(a, b):
    diff = a - b
    loss = (diff * -1.0).mean() if isinstance(diff, Var) else float(np.mean(-diff))
    return loss


def gan_loss_generator(logit_fake, logit_real):
    """Relative generator loss: mean over pairs of -(D(fake) - D(real))."""
    if logit_fake.shape != logit_real.shape:
        raise ValueError("paired logit batches must have equal shape")
    return _mean_margin(logit_fake, logit_real)


def gan_loss_critic(logit_real, logit_fake):
    """Relative critic loss: mean over pairs of -(D(real) - D(fake)). On the
    same logits this is exactly the negative of the generator loss."""
    if logit_fake.shape != logit_real.shape:
        raise ValueError("paired logit batches must have equal shape")
    return _mean_margin(logit_real, logit_fake)


# ---------------------------------------------------------------------------
# weighting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectiveWeights:
    """Mixing weights of the distribution-matching branch."""

    lambda_dmd: float = 1.0
    ot_epsilon: float = ot.DEFAULT_EPSILON

    def __post_init__(self):
        if self.lambda_dmd < 0.0:
            raise ValueError("lambda_dmd must be >= 0")
        if self.ot_epsilon <= 0.0:
            raise ValueError("ot_epsilon must be > 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveWeights":
        extra = set(d) - {"lambda_dmd", "ot_epsilon"}
        if extra:
            raise ValueError(f"unknown objective weight key {sorted(extra)[0]!r}")
        return cls(float(d.get("lambda_dmd", 1.0)),
                   float(d.get("ot_epsilon", ot.DEFAULT_EPSILON)))

    def to_dict(self) -> dict:
        return {"lambda_dmd": self.lambda_dmd, "ot_epsilon": self.ot_epsilon}
