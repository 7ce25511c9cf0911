"""Scalar training objectives.

Conventions: every loss reduces by the mean over all elements (batch and
feature dimensions), so values are batch-size invariant. "L2 distance" terms
are implemented as mean squared differences (no square root).
"""

from dataclasses import dataclass

import torch

LOG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Generator loss weights (reconstruction, latent, adversarial)."""

    w_con: float = 10.0
    w_enc: float = 1.0
    w_adv: float = 1.0


@dataclass(frozen=True)
class DistillWeights:
    """Distillation loss weights (latent-1, reconstruction, latent-2)."""

    w1: float = 1.0
    wx: float = 1.0
    w2: float = 1.0


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ValueError("%s: shape mismatch %s vs %s"
                         % (what, tuple(a.shape), tuple(b.shape)))


def s_con(x, x_hat):
    """Mean absolute reconstruction error between input and reconstruction."""
    _check_shapes(x, x_hat, "s_con")
    return (x - x_hat).abs().mean()


def s_enc(z1, z2):
    """Mean squared distance between the two latent vectors."""
    _check_shapes(z1, z2, "s_enc")
    return (z1 - z2).square().mean()


def s_adv(feat_real, feat_fake):
    """Feature-matching loss: mean squared distance of discriminator features."""
    _check_shapes(feat_real, feat_fake, "s_adv")
    return (feat_real - feat_fake).square().mean()


def generator_loss(weights, con, enc, adv):
    return weights.w_con * con + weights.w_enc * enc + weights.w_adv * adv


def discriminator_loss(p_real, p_fake):
    """Binary cross-entropy with targets 1 for real and 0 for reconstructed."""
    real_term = torch.log(p_real.clamp(min=LOG_EPS))
    fake_term = torch.log((1.0 - p_fake).clamp(min=LOG_EPS))
    return -(real_term.mean() + fake_term.mean()) / 2.0


def k1(z1_teacher, z1_student):
    """Mean squared distance between teacher and student first latents."""
    _check_shapes(z1_teacher, z1_student, "k1")
    return (z1_teacher - z1_student).square().mean()


def k2(z2_teacher, z2_student):
    """Mean squared distance between teacher and student re-encoded latents."""
    _check_shapes(z2_teacher, z2_student, "k2")
    return (z2_teacher - z2_student).square().mean()


def kx(xhat_teacher, xhat_student):
    """Mean absolute distance between teacher and student reconstructions."""
    _check_shapes(xhat_teacher, xhat_student, "kx")
    return (xhat_teacher - xhat_student).abs().mean()


def k_l(weights, v1, vx, v2):
    return weights.w1 * v1 + weights.wx * vx + weights.w2 * v2
