"""Alternating distillation loop.

One training step has two phases. The generator phase updates the few-step
generator: on even steps with the distribution-matching pair (pulled
transport gradient plus the reverse-KL surrogate), on odd steps with the
relative adversarial loss. The critic phase then freezes the generator and
updates the fake score net (denoising regression, even parity) or the
discriminator head (relative adversarial loss, odd parity), repeated
ttur_ratio times. The analytic target score is frozen throughout: it owns no
optimizer state and never enters a graph as a trainable leaf.

Runs are deterministic given the config: all draws come from named
substreams of the seed, and metrics rows serialize to byte-identical CSV.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gen_model as gmod
from . import nn_core as nc
from . import objectives as obj
from . import ot_core as ot

METRICS_HEADER = ("step,branch,loss_dmd,loss_otd,loss_gan_g,loss_denoise,"
                  "loss_gan_c,w2,mode_coverage,grad_norm,sinkhorn_iters,wall_ms")

# evaluation solver settings: small-entropy transport cost on sample clouds,
# truncated then rounded back onto the marginals (see ot_core.round_to_feasible).
# 10000 iterations keeps the truncation gap under 0.1% of the assignment
# optimum on 8x8 probes; 2000 left double-digit-percent gaps on bad geometry
EVAL_EPSILON = 1e-3
EVAL_TOL = 1e-6
EVAL_MAX_ITER = 10000

DEFAULT_TARGET = {"type": "gm_ring", "modes": 8, "radius": 4.0, "sigma": 0.2}

_CONFIG_FIELDS = None  # filled after TrainConfig is defined


@dataclass(frozen=True)
class TrainConfig:
    """Everything a run needs; serializes losslessly to a flat JSON dict."""

    max_step: int = 1000
    batch_size: int = 64
    lr_generator: float = 1e-4
    lr_critic: float = 1e-4
    ttur_ratio: int = 5
    lambda_dmd: float = 1.0
    ot_epsilon: float = ot.DEFAULT_EPSILON
    sinkhorn_tol: float = 1e-6
    sinkhorn_max_iter: int = 500
    schedule: tuple = gmod.DEFAULT_SCHEDULE.steps
    target: dict = dataclasses.field(default_factory=lambda: dict(DEFAULT_TARGET))
    seed: int = 0
    enable_otd: bool = True
    enable_gan: bool = True
    acc_init: bool = False
    acc_init_steps: int = 500
    task: str = "t2v"
    frames: int = 4
    frame_dim: int = 2
    prompt_dim: int = 4
    gen_hidden: tuple = (128, 128)
    fake_hidden: tuple = (64, 64, 64, 64)
    disc_taps: tuple = (1, 2, 3)
    disc_proj_dim: int = 16
    temb_dim: int = 8
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.lr_generator <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")
        if self.ttur_ratio < 1:
            raise ValueError("ttur_ratio must be >= 1")
        if self.lambda_dmd < 0:
            raise ValueError("lambda_dmd must be >= 0")
        if self.ot_epsilon <= 0 or self.sinkhorn_tol <= 0:
            raise ValueError("ot_epsilon and sinkhorn_tol must be positive")
        if self.sinkhorn_max_iter < 1 or self.acc_init_steps < 1:
            raise ValueError("iteration counts must be >= 1")
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if self.frames < 1 or self.frame_dim < 1 or self.prompt_dim < 0:
            raise ValueError("bad video geometry")
        if self.temb_dim < 2 or self.temb_dim % 2:
            raise ValueError("temb_dim must be a positive even number")
        object.__setattr__(self, "schedule", tuple(float(t) for t in self.schedule))
        gmod.NoiseSchedule(self.schedule)  # validates
        object.__setattr__(self, "gen_hidden", tuple(int(w) for w in self.gen_hidden))
        object.__setattr__(self, "fake_hidden", tuple(int(w) for w in self.fake_hidden))
        object.__setattr__(self, "disc_taps", tuple(int(i) for i in self.disc_taps))
        if not self.gen_hidden or not self.fake_hidden:
            raise ValueError("hidden widths must be non-empty")
        widths = set(self.fake_hidden[i] for i in self.disc_taps
                     if 0 <= i < len(self.fake_hidden))
        if any(i < 0 or i >= len(self.fake_hidden) for i in self.disc_taps):
            raise ValueError("disc_taps out of range for fake_hidden")
        if len(widths) != 1:
            raise ValueError("tapped hidden layers must share one width")
        if self.task not in ("t2v", "r2v", "v2v", "mv2v"):
            raise ValueError(f"unknown task: {self.task!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config key {sorted(extra)[0]!r}")
        kwargs = dict(d)
        for key in ("schedule", "gen_hidden", "fake_hidden", "disc_taps"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("schedule", "gen_hidden", "fake_hidden", "disc_taps"):
            d[key] = list(d[key])
        return d

    @property
    def dim(self) -> int:
        return self.frames * self.frame_dim


@dataclass
class MetricsRow:
    """One CSV row; None fields serialize as empty cells. wall_ms is pinned
    to 0 so repeated runs stay byte-identical (real timings go to the event
    log)."""

    step: int
    branch: str
    loss_dmd: float = None
    loss_otd: float = None
    loss_gan_g: float = None
    loss_denoise: float = None
    loss_gan_c: float = None
    w2: float = None
    mode_coverage: float = None
    grad_norm: float = None
    sinkhorn_iters: int = None
    wall_ms: int = 0

    def csv_line(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, int):
                return str(v)
            return repr(float(v))

        return ",".join([
            str(self.step), self.branch,
            fmt(self.loss_dmd), fmt(self.loss_otd), fmt(self.loss_gan_g),
            fmt(self.loss_denoise), fmt(self.loss_gan_c),
            fmt(self.w2), fmt(self.mode_coverage), fmt(self.grad_norm),
            fmt(self.sinkhorn_iters), str(self.wall_ms),
        ])


@dataclass
class TrainState:
    """Mutable run state. The target mixture is data, not a parameter set:
    there is deliberately no optimizer state for it."""

    cfg: TrainConfig
    theta: nc.MlpParams          # generator
    phi: nc.MlpParams            # fake score net (denoiser)
    disc: obj.DiscriminatorParams
    adam_gen: nc.AdamState
    adam_fake: nc.AdamState
    adam_disc: nc.AdamState
    target: gmod.GaussianMixture
    prompt: np.ndarray
    cond: np.ndarray
    rng: np.random.Generator     # training stream
    step: int = 0
    history: list = dataclasses.field(default_factory=list)
    events: list = dataclasses.field(default_factory=list)

    @property
    def schedule(self) -> gmod.NoiseSchedule:
        return gmod.NoiseSchedule(self.cfg.schedule)


def _gen_widths(cfg: TrainConfig, cond_dim: int) -> list:
    return [cfg.dim + cfg.temb_dim + cond_dim, *cfg.gen_hidden, cfg.dim]


def _fake_widths(cfg: TrainConfig) -> list:
    return [cfg.dim + cfg.temb_dim, *cfg.fake_hidden, cfg.dim]


def _log_event(state: TrainState, **fields):
    state.events.append(fields)


def init_state(cfg: TrainConfig) -> TrainState:
    """Build a run: target mixture, conditioning, nets, optimizers, streams.

    Substreams of the seed: [seed,0] initialization draws (prompt, then
    generator, fake net, discriminator), [seed,1] the training stream,
    [seed,2,step] evaluation, [seed,3,*] the unconditional pre-distillation
    stage when acc_init is on.
    """
    rng_init = np.random.default_rng([cfg.seed, 0])
    target = gmod.build_target(cfg.target, frames=cfg.frames)
    if target.dim != cfg.dim:
        raise ValueError("target dimension does not match frames * frame_dim")

    prompt = rng_init.normal(0.0, 1.0, cfg.prompt_dim)
    vcu = gmod.build_vcu(cfg.task, prompt, cfg.frames, cfg.frame_dim)
    cond = gmod.encode_condition(vcu)

    theta = nc.init_mlp(_gen_widths(cfg, cond.size), rng_init)
    phi = nc.init_mlp(_fake_widths(cfg), rng_init)
    disc = obj.init_discriminator(rng_init, feature_width=cfg.fake_hidden[cfg.disc_taps[0]],
                                  taps=cfg.disc_taps, proj_dim=cfg.disc_proj_dim,
                                  temb_dim=cfg.temb_dim)

    state = TrainState(
        cfg=cfg, theta=theta, phi=phi, disc=disc,
        adam_gen=nc.adam_init(theta.param_list(), cfg.lr_generator),
        adam_fake=nc.adam_init(phi.param_list(), cfg.lr_critic),
        adam_disc=nc.adam_init(disc.param_list(), cfg.lr_critic),
        target=target, prompt=prompt, cond=cond,
        rng=np.random.default_rng([cfg.seed, 1]),
    )
    if cfg.acc_init:
        state.theta = _acc_init_generator(cfg, target)
        state.adam_gen = nc.adam_init(state.theta.param_list(), cfg.lr_generator)
        _log_event(state, event="acc_init_done", steps=cfg.acc_init_steps)
    return state


def _acc_init_generator(cfg: TrainConfig, target: gmod.GaussianMixture) -> nc.MlpParams:
    """Two-stage initialization: first distill an unconditional generator on
    the same target with the plain reverse-KL objective, then widen its input
    layer with zero rows for the condition block so the conditional net starts
    exactly at the unconditional optimum."""
    stage_cfg = dataclasses.replace(
        cfg, max_step=cfg.acc_init_steps, enable_otd=False, enable_gan=False,
        acc_init=False, prompt_dim=0)
    stage = TrainState(
        cfg=stage_cfg,
        theta=nc.init_mlp(_gen_widths(stage_cfg, 0), np.random.default_rng([cfg.seed, 3, 0])),
        phi=nc.init_mlp(_fake_widths(stage_cfg), np.random.default_rng([cfg.seed, 3, 0])),
        disc=obj.init_discriminator(np.random.default_rng([cfg.seed, 3, 0]),
                                    feature_width=cfg.fake_hidden[cfg.disc_taps[0]],
                                    taps=cfg.disc_taps, proj_dim=cfg.disc_proj_dim,
                                    temb_dim=cfg.temb_dim),
        adam_gen=None, adam_fake=None, adam_disc=None,
        target=target, prompt=np.zeros(0), cond=np.zeros(0),
        rng=np.random.default_rng([cfg.seed, 3, 1]),
    )
    stage.adam_gen = nc.adam_init(stage.theta.param_list(), stage_cfg.lr_generator)
    stage.adam_fake = nc.adam_init(stage.phi.param_list(), stage_cfg.lr_critic)
    stage.adam_disc = nc.adam_init(stage.disc.param_list(), stage_cfg.lr_critic)
    for _ in range(stage_cfg.max_step):
        train_step(stage)

    # stage 2: append zero-initialized input rows for the condition features
    uncond = stage.theta
    cond_dim = _cond_dim(cfg)
    w0 = np.vstack([uncond.weights[0], np.zeros((cond_dim, uncond.widths[1]))])
    weights = (w0,) + uncond.weights[1:]
    return nc.MlpParams(weights, uncond.biases, uncond.activation)


def _cond_dim(cfg: TrainConfig) -> int:
    vcu = gmod.build_vcu(cfg.task, np.zeros(cfg.prompt_dim), cfg.frames, cfg.frame_dim)
    return gmod.encode_condition(vcu).size


def _assert_only_trainable(graph: nc.Graph, leaves):
    """Structural frozen-teacher check: the loss graph must hold exactly the
    lifted parameter leaves and nothing else trainable."""
    expected = {v.idx for v in leaves}
    actual = {v.idx for v in graph.leaves()}
    if expected != actual:
        raise AssertionError("unexpected trainable leaves on the loss graph")


def _sample_t(state: TrainState) -> float:
    steps = state.cfg.schedule
    return steps[int(state.rng.integers(len(steps)))]


def _generator_phase(state: TrainState, parity: int) -> dict:
    cfg = state.cfg
    out = {"branch": "dm", "loss_dmd": None, "loss_otd": None,
           "loss_gan_g": None, "grad_norm": None, "sinkhorn_iters": None}

    graph = nc.Graph()
    ws, bs, leaves = nc.lift_mlp(graph, state.theta, trainable=True)
    z = state.rng.normal(0.0, 1.0, (cfg.batch_size, cfg.dim))
    x0_hat, _ = gmod.generator_rollout(ws, bs, z, state.cond, state.schedule,
                                       state.rng, cfg.temb_dim)
    t = _sample_t(state)
    noise = state.rng.normal(0.0, 1.0, (cfg.batch_size, cfg.dim))

    gan_step = parity == 1 and cfg.enable_gan
    if not gan_step:
        x_t = gmod.add_noise(x0_hat.value, t, noise).x_t
        fake_fn = obj.DenoiserScore(state.phi, t, cfg.temb_dim)
        real_fn = obj.AnalyticMixtureScore(state.target, t)
        g_kl = obj.kl_gradient(real_fn(x_t), fake_fn(x_t))
        loss = cfg.lambda_dmd * obj.dmd_loss(x0_hat, g_kl)
        out["loss_dmd"] = float(np.mean(g_kl * g_kl))
        if cfg.enable_otd:
            res = obj.otd_gradient(x_t, fake_fn, real_fn, epsilon=cfg.ot_epsilon,
                                   tol=cfg.sinkhorn_tol, max_iter=cfg.sinkhorn_max_iter)
            out["sinkhorn_iters"] = res.iterations
            if res.converged:
                loss = obj.otd_loss(x0_hat, res.grad) + loss
                out["loss_otd"] = float(np.mean(res.grad * res.grad))
            else:
                _log_event(state, event="sinkhorn_stale", step=state.step,
                           iterations=res.iterations)
    else:
        out["branch"] = "gan"
        # fake path stays traced through the generator; the critic stack is
        # frozen, so gradient reaches theta through the tapped activations
        x_t_fake = x0_hat * (1.0 - t) + noise * t
        fws, fbs, _ = nc.lift_mlp(graph, state.phi, trainable=False)
        hidden = []
        nc.mlp_forward(fws, fbs, gmod.score_net_input(x_t_fake, t, cfg.temb_dim), hidden)
        pairs, head, _ = obj.lift_discriminator(graph, state.disc, trainable=False)
        logit_fake = obj.discriminator_forward(pairs, head, cfg.disc_taps, hidden,
                                               t, cfg.temb_dim)
        x_real = gmod.gm_sample(state.target, cfg.batch_size, state.rng)
        noise_r = state.rng.normal(0.0, 1.0, (cfg.batch_size, cfg.dim))
        x_t_real = gmod.add_noise(x_real, t, noise_r).x_t
        acts_real = []
        nc.mlp_apply(state.phi, gmod.score_net_input(x_t_real, t, cfg.temb_dim), acts_real)
        logit_real = obj.disc_apply(state.disc, acts_real, t)
        loss = obj.gan_loss_generator(logit_fake, graph.constant(logit_real))
        out["loss_gan_g"] = float(loss.value)

    _assert_only_trainable(graph, leaves)
    grads = nc.backward(loss, leaves)
    grads, norm = nc.clip_global_norm(grads, cfg.grad_clip)
    out["grad_norm"] = norm
    new_params, state.adam_gen = nc.adam_step(state.theta.param_list(), grads,
                                              state.adam_gen)
    state.theta = state.theta.with_param_list(new_params)
    return out


def _critic_phase(state: TrainState, parity: int) -> dict:
    cfg = state.cfg
    denoise_losses, gan_losses = [], []
    gan_step = parity == 1 and cfg.enable_gan

    for _ in range(cfg.ttur_ratio):
        z = state.rng.normal(0.0, 1.0, (cfg.batch_size, cfg.dim))
        x0_hat = gmod.rollout_sample(state.theta, z, state.cond, state.schedule,
                                     state.rng, cfg.temb_dim)
        t = _sample_t(state)
        noise = state.rng.normal(0.0, 1.0, (cfg.batch_size, cfg.dim))

        graph = nc.Graph()
        if not gan_step:
            x_t = gmod.add_noise(x0_hat, t, noise).x_t
            fws, fbs, leaves = nc.lift_mlp(graph, state.phi, trainable=True)
            loss = gmod.denoising_loss(fws, fbs, x_t, t, x0_hat, cfg.temb_dim)
            denoise_losses.append(float(loss.value))
            _assert_only_trainable(graph, leaves)
            grads = nc.backward(loss, leaves)
            grads, _ = nc.clip_global_norm(grads, cfg.grad_clip)
            new_params, state.adam_fake = nc.adam_step(state.phi.param_list(),
                                                       grads, state.adam_fake)
            state.phi = state.phi.with_param_list(new_params)
        else:
            x_t_fake = gmod.add_noise(x0_hat, t, noise).x_t
            x_real = gmod.gm_sample(state.target, cfg.batch_size, state.rng)
            noise_r = state.rng.normal(0.0, 1.0, (cfg.batch_size, cfg.dim))
            x_t_real = gmod.add_noise(x_real, t, noise_r).x_t
            acts_fake, acts_real = [], []
            nc.mlp_apply(state.phi, gmod.score_net_input(x_t_fake, t, cfg.temb_dim), acts_fake)
            nc.mlp_apply(state.phi, gmod.score_net_input(x_t_real, t, cfg.temb_dim), acts_real)
            pairs, head, leaves = obj.lift_discriminator(graph, state.disc, trainable=True)
            logit_fake = obj.discriminator_forward(pairs, head, cfg.disc_taps,
                                                   [graph.constant(a) for a in acts_fake],
                                                   t, cfg.temb_dim)
            logit_real = obj.discriminator_forward(pairs, head, cfg.disc_taps,
                                                   [graph.constant(a) for a in acts_real],
                                                   t, cfg.temb_dim)
            loss = obj.gan_loss_critic(logit_real, logit_fake)
            gan_losses.append(float(loss.value))
            _assert_only_trainable(graph, leaves)
            grads = nc.backward(loss, leaves)
            grads, _ = nc.clip_global_norm(grads, cfg.grad_clip)
            new_params, state.adam_disc = nc.adam_step(state.disc.param_list(),
                                                       grads, state.adam_disc)
            state.disc = state.disc.with_param_list(new_params)

    return {
        "loss_denoise": float(np.mean(denoise_losses)) if denoise_losses else None,
        "loss_gan_c": float(np.mean(gan_losses)) if gan_losses else None,
    }


def train_step(state: TrainState) -> MetricsRow:
    """One alternating step: generator phase, then ttur_ratio critic updates
    of the same parity. A non-finite value anywhere aborts the step and rolls
    parameters and optimizer moments back bit-identically (the random stream
    keeps advancing so a retry sees fresh draws)."""
    parity = state.step % 2
    snapshot = (state.theta, state.phi, state.disc,
                state.adam_gen, state.adam_fake, state.adam_disc)
    try:
        gen_out = _generator_phase(state, parity)
        critic_out = _critic_phase(state, parity)
        row = MetricsRow(
            step=state.step, branch=gen_out["branch"],
            loss_dmd=gen_out["loss_dmd"], loss_otd=gen_out["loss_otd"],
            loss_gan_g=gen_out["loss_gan_g"],
            loss_denoise=critic_out["loss_denoise"],
            loss_gan_c=critic_out["loss_gan_c"],
            grad_norm=gen_out["grad_norm"],
            sinkhorn_iters=gen_out["sinkhorn_iters"],
        )
    except nc.NonFiniteError as exc:
        (state.theta, state.phi, state.disc,
         state.adam_gen, state.adam_fake, state.adam_disc) = snapshot
        _log_event(state, event="rollback", step=state.step, reason=str(exc))
        row = MetricsRow(step=state.step,
                         branch="gan" if parity == 1 and state.cfg.enable_gan else "dm")
    state.step += 1
    state.history.append(row)
    return row


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def mode_hit_fractions(samples: np.ndarray, target: gmod.GaussianMixture) -> np.ndarray:
    """Per mode: fraction of samples within 3 sigma of the mode mean."""
    sigma = np.sqrt(target.variances)
    dist = np.linalg.norm(samples[:, None, :] - target.means[None, :, :], axis=2)
    return np.mean(dist <= 3.0 * sigma[None, :], axis=0)


def mode_coverage(samples: np.ndarray, target: gmod.GaussianMixture) -> float:
    """Fraction of mixture modes holding at least one sample within 3 sigma."""
    return float(np.mean(mode_hit_fractions(samples, target) > 0.0))


def sample_cloud_w2(generated: np.ndarray, target_samples: np.ndarray,
                    max_iter: int = EVAL_MAX_ITER) -> dict:
    """Transport cost between two equal-size sample clouds with the package's
    half-squared-distance cost, solved at small entropy and rounded back onto
    exact marginals so truncation never underestimates."""
    D = ot.pairwise_half_sq_euclidean(generated, target_samples)
    sol = ot.sinkhorn_log(D, epsilon=EVAL_EPSILON, tol=EVAL_TOL,
                          max_iter=max_iter)
    plan = ot.round_to_feasible(sol.plan)
    return {"w2": float(np.sum(D * plan)), "iterations": sol.iterations,
            "converged": sol.converged}


def evaluate(state: TrainState, target: gmod.GaussianMixture = None,
             n_samples: int = 256, schedule: gmod.NoiseSchedule = None) -> dict:
    """Sample-cloud transport cost, mode coverage, and the fake net's score
    error against the analytic score, averaged over the rollout times. Uses
    its own [seed, 2, step] stream so evaluation never perturbs training."""
    cfg = state.cfg
    if target is None:
        target = state.target
    if schedule is None:
        schedule = state.schedule
    if n_samples > 512:
        raise ValueError("n_samples capped at 512 to keep the solve cheap")
    rng = np.random.default_rng([cfg.seed, 2, state.step])

    z = rng.normal(0.0, 1.0, (n_samples, cfg.dim))
    generated = gmod.rollout_sample(state.theta, z, state.cond, schedule, rng,
                                    cfg.temb_dim)
    target_samples = gmod.gm_sample(target, n_samples, rng)
    transport = sample_cloud_w2(generated, target_samples)

    errs = []
    for t in schedule.steps:
        noise = rng.normal(0.0, 1.0, target_samples.shape)
        x_t = gmod.add_noise(target_samples, t, noise).x_t
        fake = obj.DenoiserScore(state.phi, t, cfg.temb_dim)(x_t)
        real = gmod.gm_score(target.noised(t), x_t)
        errs.append(float(np.mean(np.linalg.norm(fake - real, axis=1))))

    return {
        "w2": transport["w2"],
        "mode_coverage": mode_coverage(generated, target),
        "score_error": float(np.mean(errs)),
        "sinkhorn_iterations": transport["iterations"],
        "n_samples": n_samples,
    }


def zero_forcing_diagnostic(state: TrainState, n_samples: int = 512) -> dict:
    """Where does the generator put its mass, and did the generator gradient
    ever spike? Modes the fake distribution abandons stop contributing
    reverse-KL gradient, so empty modes at convergence are the signature of
    mode collapse; gradient-norm spikes (100x the trailing median over the
    last 50 recorded steps) flag instability."""
    rng = np.random.default_rng([state.cfg.seed, 4])
    z = rng.normal(0.0, 1.0, (n_samples, state.cfg.dim))
    samples = gmod.rollout_sample(state.theta, z, state.cond, state.schedule,
                                  rng, state.cfg.temb_dim)
    fractions = mode_hit_fractions(samples, state.target)

    norms = [(r.step, r.grad_norm) for r in state.history if r.grad_norm is not None]
    spikes = []
    for i, (step, norm) in enumerate(norms):
        window = [n for _, n in norms[max(0, i - 50):i]]
        if window and norm > 100.0 * float(np.median(window)):
            spikes.append(step)

    return {
        "mode_fractions": [float(f) for f in fractions],
        "empty_modes": [int(k) for k, f in enumerate(fractions) if f == 0.0],
        "gradient_spike_steps": spikes,
        "n_samples": n_samples,
    }


# ---------------------------------------------------------------------------
# run loop with artifacts
# ---------------------------------------------------------------------------


def _write_checkpoints(state: TrainState, out_dir: Path, tag: str):
    nc.save_mlp(out_dir / f"generator_{tag}.json", state.theta)
    nc.save_mlp(out_dir / f"fake_score_{tag}.json", state.phi)
    obj.save_discriminator(out_dir / f"discriminator_{tag}.json", state.disc)


def run_training(cfg: TrainConfig, out_dir=None, eval_every: int = 250,
                 eval_samples: int = 128, checkpoint_every: int = 0,
                 quiet: bool = True, state: TrainState = None):
    """Train for cfg.max_step steps; returns (state, rows). With out_dir set,
    writes metrics.csv (fixed header, byte-deterministic), events.log (JSON
    lines, includes wall timings), and final checkpoints."""
    t_start = time.perf_counter()
    if state is None:
        state = init_state(cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    _log_event(state, event="run_start", max_step=cfg.max_step, seed=cfg.seed)

    rows = []
    for _ in range(cfg.max_step):
        row = train_step(state)
        if eval_every and (state.step % eval_every == 0 or state.step == cfg.max_step):
            metrics = evaluate(state, n_samples=eval_samples)
            row.w2 = metrics["w2"]
            row.mode_coverage = metrics["mode_coverage"]
            _log_event(state, event="eval", step=state.step, **metrics)
            if not quiet:
                print(f"step {state.step}: w2={metrics['w2']:.4f} "
                      f"coverage={metrics['mode_coverage']:.3f}")
        if out_dir is not None and checkpoint_every and state.step % checkpoint_every == 0:
            _write_checkpoints(state, out_dir, f"step{state.step}")
            _log_event(state, event="checkpoint", step=state.step)
        rows.append(row)

    _log_event(state, event="run_end", steps=state.step,
               wall_ms=int((time.perf_counter() - t_start) * 1000))
    if out_dir is not None:
        with open(out_dir / "metrics.csv", "w") as f:
            f.write(METRICS_HEADER + "\n")
            for row in rows:
                f.write(row.csv_line() + "\n")
        with open(out_dir / "events.log", "w") as f:
            for event in state.events:
                f.write(json.dumps(event, sort_keys=True) + "\n")
        _write_checkpoints(state, out_dir, "final")
    return state, rows
