"""The GAAE objective.

Generator-side pieces (hinge form):

    G_loss      = -(mean(S(recon)) + mean(S(gen))) / 2
    Lgen_loss   = -mean(L(z_style))
    R_loss      = mse(recon, x)
    Cl_loss     = cross-entropy on guidance data
    Cg_loss     = cross-entropy on re-encoded generated samples (detached)
    EDC_loss    = alpha*(w1*G + w2*lambda*R) + beta*(w3*Cl + w4*Cg + w5*Lgen)

Critic-side hinge losses:

    S_loss  = mean(relu(1 - s_real)) + (mean(relu(1 + s_fake_recon))
                                        + mean(relu(1 + s_fake_gen))) / 2
    L_loss  = mean(relu(1 - l_real)) + mean(relu(1 + l_fake))

Both critics are trained by *descending* these values: a perfect critic
drives them to zero, and they are unbounded above, so gradient ascent (as
the usual GAN-algorithm phrasing goes) has no finite optimum here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .grad import Tensor
from .grad import ops

WEIGHT_SUM_TOL = 1e-9


@dataclass
class HyperParams:
    """Loss weights and optimizer ledger; defaults are the tuned values."""

    omega1: float = 0.6       # generation vs ...
    omega2: float = 0.4       # ... reconstruction
    omega3: float = 0.25      # guidance classification
    omega4: float = 0.25      # generated-sample classification
    omega5: float = 0.5       # latent generation
    alpha: float = 0.5        # sample-side group
    beta: float = 0.5         # latent-side group
    lam: float = 20.0         # reconstruction rescale
    k: int = 2                # critic steps per iteration
    batch_size: int = 128
    lr_edc: float = 5e-5
    lr_disc: float = 2e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> "HyperParams":
        pairs = [
            ("omega1+omega2", self.omega1 + self.omega2),
            ("omega3+omega4+omega5", self.omega3 + self.omega4 + self.omega5),
            ("alpha+beta", self.alpha + self.beta),
        ]
        for name, total in pairs:
            if abs(total - 1.0) > WEIGHT_SUM_TOL:
                raise ConfigError(f"constraint {name} = 1 violated (got {total})")
        for name in ("omega1", "omega2", "omega3", "omega4", "omega5",
                     "alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")
        if self.lr_edc < 0 or self.lr_disc < 0:
            raise ConfigError("learning rates must be non-negative")
        return self


@dataclass
class LossReport:
    g: float = 0.0
    r: float = 0.0
    l_gen: float = 0.0
    cl: float = 0.0
    cg: float = 0.0
    edc: float = 0.0
    s: float = 0.0
    l_disc: float = 0.0

    FIELDS = ("g", "r", "l_gen", "cl", "cg", "edc", "s", "l_disc")

    def values(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]

    def finite(self) -> bool:
        import math
        return all(math.isfinite(v) for v in self.values())


def _hinge_real(scores: Tensor) -> Tensor:
    return ops.tmean(ops.relu(1.0 - scores))


def _hinge_fake(scores: Tensor) -> Tensor:
    return ops.tmean(ops.relu(1.0 + scores))


def g_loss(s_recon_scores: Tensor, s_gen_scores: Tensor) -> Tensor:
    """Average generator hinge over the reconstruction and generation paths."""
    return -0.5 * (ops.tmean(s_recon_scores) + ops.tmean(s_gen_scores))


def latent_gen_loss(l_scores: Tensor) -> Tensor:
    """Encoder-side latent loss: push style latents toward 'real' scores."""
    return -ops.tmean(l_scores)


def r_loss(recon: Tensor, x: Tensor) -> Tensor:
    return ops.mse(recon, x)


def cl_loss(logits: Tensor, y_one_hot: Tensor) -> Tensor:
    return ops.softmax_cross_entropy(logits, y_one_hot)


def cg_loss(logits: Tensor, y_one_hot: Tensor) -> Tensor:
    # identical arithmetic to cl_loss; the detach of the generated sample
    # happens where the sample is re-encoded, not here
    return ops.softmax_cross_entropy(logits, y_one_hot)


def edc_loss(g: Tensor, r: Tensor, cl: Tensor, cg: Tensor, l_gen: Tensor,
             hp: HyperParams) -> Tensor:
    hp.validate()
    sample_side = hp.omega1 * g + hp.omega2 * (hp.lam * r)
    latent_side = hp.omega3 * cl + hp.omega4 * cg + hp.omega5 * l_gen
    return hp.alpha * sample_side + hp.beta * latent_side


def s_loss(real_scores: Tensor, fake_recon_scores: Tensor,
           fake_gen_scores: Tensor) -> Tensor:
    """Sample-critic hinge; the two fake paths are averaged."""
    return _hinge_real(real_scores) + 0.5 * (
        _hinge_fake(fake_recon_scores) + _hinge_fake(fake_gen_scores))


def l_disc_loss(real_z_scores: Tensor, fake_z_scores: Tensor) -> Tensor:
    """Latent-critic hinge between prior draws and encoded style latents."""
    return _hinge_real(real_z_scores) + _hinge_fake(fake_z_scores)


def interpolate_latent(z0, z1, steps: int, literal_form: bool = False):
    """Evenly spaced path between two latents, endpoints included.

    The conventional segment z0 + eta*(z1 - z0) is the default. The
    published description walks z0 + eta*(z0 - z1), which moves away from
    z1 for positive eta; it stays available behind `literal_form` for
    side-by-side comparison.
    """
    if steps < 2:
        raise ConfigError("interpolation needs at least 2 steps")
    z0 = np.asarray(z0, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    etas = np.linspace(0.0, 1.0, steps)
    direction = (z0 - z1) if literal_form else (z1 - z0)
    return [z0 + eta * direction for eta in etas]
