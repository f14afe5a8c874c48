"""Analytic scores of noised Gaussian mixtures, and the denoiser bridge.

The training signal needs the gradient of log density at noised samples.
For mixture targets that gradient is available in closed form at every
noise level, which is what makes the whole lab checkable.
"""

import numpy as np

from otdlab import gen_model as gmod
from otdlab import nn_core as nc
from otdlab import objectives as obj


def score_vs_finite_difference():
    gm = gmod.gm_ring(3, radius=2.0, sigma=0.4)
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1.5, (4, 2))
    for t in (0.0, 0.5):
        noised = gm.noised(t)
        s = gmod.gm_score(noised, x)
        h = 1e-6
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            fd[idx] = (gmod.gm_logpdf(noised, xp[idx[0]:idx[0] + 1])[0]
                       - gmod.gm_logpdf(noised, xm[idx[0]:idx[0] + 1])[0]) / (2 * h)
        rel = np.linalg.norm(s - fd) / np.linalg.norm(fd)
        print(f"t={t}: analytic score vs FD of logpdf, rel err {rel:.2e}")


def denoiser_bridge():
    # an x0-predicting net induces a score at noise level t; at t=1 the
    # induced score is -x_t no matter what the net says, and the true score
    # of the fully noised mixture is also -x_t: the signal vanishes by design
    rng = np.random.default_rng(1)
    gm = gmod.gm_ring(3, radius=2.0, sigma=0.4)
    net = nc.init_mlp([2 + 8, 16, 2], rng)
    x = rng.normal(0, 1, (5, 2))
    print("\nmean |induced - true| score across noise levels")
    for t in (0.25, 0.5, 0.75, 1.0):
        fake = obj.DenoiserScore(net, t)(x)
        real = gmod.gm_score(gm.noised(t), x)
        gap = float(np.mean(np.linalg.norm(fake - real, axis=1)))
        print(f"  t={t:4}: {gap:.4f}" + ("   <- degenerate, both are -x" if t == 1.0 else ""))


def kl_direction_on_gaussians():
    # with exact scores of two unit-variance Gaussians the matching direction
    # collapses to the difference of the means, same at every sample
    rng = np.random.default_rng(2)
    mu_real = np.array([1.0, -2.0])
    mu_fake = np.array([-0.5, 0.5])
    x = rng.normal(0, 2, (6, 2))
    g = obj.kl_gradient(real_scores=-(x - mu_real), fake_scores=-(x - mu_fake))
    print("\nkl direction rows (all equal mu_fake - mu_real "
          f"= {mu_fake - mu_real}):")
    print(np.array_str(g, precision=12))


def main():
    score_vs_finite_difference()
    denoiser_bridge()
    kl_direction_on_gaussians()


if __name__ == "__main__":
    main()
