"""Training losses for the de-morphing generator and its three adversaries.

The two cross-road losses handle the unordered output pair by evaluating
both (output, ground-truth) pairings and keeping the smaller sum; ties
resolve to the direct pairing. Reconstruction uses mean absolute error so
loss magnitudes are resolution independent; the biometric term uses the
comparator's cosine distance. Adversarial terms are cross-entropy GAN
losses with the non-saturating generator form.

The composite objective is

    total = L_R + beta_C * L_C + beta_B * L_B + beta_M * L_M

with beta_C and beta_M held at zero for the first 10 epochs by default.
"""

import math
from dataclasses import dataclass, field

import torch

from .errors import NonFiniteLossError, StructuralError

DIRECT = "direct"
SWAPPED = "swapped"

_EPS = 1e-12


@dataclass
class LossWeights:
    """Regularization weights plus their epoch schedule.

    Defaults replicate the reference recipe: beta_C = beta_M = 0.001 after a
    10-epoch warmup during which both are zero, beta_B = 1e12 throughout.
    `schedule` may be replaced by any callable (epoch, weights) ->
    (beta_c, beta_b, beta_m).
    """

    beta_c: float = 1e-3
    beta_b: float = 1e12
    beta_m: float = 1e-3
    warmup_epochs: int = 10
    schedule: callable = None

    def __post_init__(self):
        if min(self.beta_c, self.beta_b, self.beta_m) < 0:
            raise StructuralError("loss weights must be nonnegative")

    def effective(self, epoch: int):
        """(beta_c, beta_b, beta_m) in force at a given 0-based epoch."""
        if self.schedule is not None:
            return self.schedule(epoch, self)
        if epoch < self.warmup_epochs:
            return 0.0, self.beta_b, 0.0
        return self.beta_c, self.beta_b, self.beta_m


@dataclass
class LossBreakdown:
    l_r: float
    l_c: float
    l_b: float
    l_m: float
    total: float
    chosen_pairing: str = DIRECT

    LOG_HEADER = ["epoch", "step", "L_R", "L_C", "L_B", "L_M", "total", "pairing"]

    def log_row(self, epoch: int, step: int) -> list:
        return [epoch, step, f"{self.l_r:.8g}", f"{self.l_c:.8g}", f"{self.l_b:.8g}",
                f"{self.l_m:.8g}", f"{self.total:.8g}", self.chosen_pairing]


def _check_shapes(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise StructuralError(
                f"loss inputs must share shape, got {[tuple(x.shape) for x in tensors]}"
            )


def crossroad_reconstruction_loss(i1, i2, o1, o2):
    """Minimum over both pairings of summed mean-L1 errors.

    Returns (value, pairing); `value` keeps gradients into the chosen
    branch. The pairing decision is made jointly over the whole batch.
    """
    _check_shapes(i1, i2, o1, o2)
    direct = (i1 - o1).abs().mean() + (i2 - o2).abs().mean()
    swapped = (i1 - o2).abs().mean() + (i2 - o1).abs().mean()
    if direct.item() <= swapped.item():
        return direct, DIRECT
    return swapped, SWAPPED


def crossroad_biometric_loss(i1, i2, o1, o2, comparator):
    """Minimum over both pairings of summed comparator distances, in [0, 4]."""
    _check_shapes(i1, i2, o1, o2)
    direct = comparator.distance(i1, o1).mean() + comparator.distance(i2, o2).mean()
    swapped = comparator.distance(i1, o2).mean() + comparator.distance(i2, o1).mean()
    return direct if direct.item() <= swapped.item() else swapped


def _bce_real(scores):
    return -torch.log(scores.clamp_min(_EPS)).mean()


def _bce_fake(scores):
    return -torch.log((1.0 - scores).clamp_min(_EPS)).mean()


def decomposition_critic_loss(i1, i2, o1, o2, critic, mixture_weight: float):
    """Critic and generator sides of the pair-realness objective.

    The critic sees three pairs: the genuine source pair (label 1), the
    generated pair (label 0), and a synthetic mixture pair (m, m) with
    m = w*i1 + (1-w)*i2 (label 0) that sharpens the real/blended boundary.
    Generator side is the non-saturating term on the generated pair.
    """
    _check_shapes(i1, i2, o1, o2)
    w = float(mixture_weight)
    if not 0.0 <= w <= 1.0:
        raise StructuralError(f"mixture weight {w} outside [0,1]")
    mixture = w * i1 + (1.0 - w) * i2
    s_real = critic(i1, i2)
    s_fake = critic(o1, o2)
    s_mix = critic(mixture, mixture)
    d_loss = _bce_real(s_real) + _bce_fake(s_fake) + _bce_fake(s_mix)
    g_loss = _bce_real(s_fake)
    return d_loss, g_loss


def markovian_loss(i1, i2, o1, o2, condition, d_m1, d_m2):
    """Patch-grid realness objective summed over the two discriminators.

    Caller routes (o1, o2) to match (i1, i2) beforehand (same argmin as the
    reconstruction pairing). Each discriminator is conditioned on the
    observed input and scores real patches from its I_k against fake
    patches from its O_k; per-patch cross-entropies are averaged over the
    grid, then summed over k.
    """
    _check_shapes(i1, i2, o1, o2, condition)
    d_loss = condition.new_zeros(())
    g_loss = condition.new_zeros(())
    for disc, real, fake in ((d_m1, i1, o1), (d_m2, i2, o2)):
        grid_real = disc(real, condition)
        grid_fake = disc(fake, condition)
        d_loss = d_loss + _bce_real(grid_real) + _bce_fake(grid_fake)
        g_loss = g_loss + _bce_real(grid_fake)
    return d_loss, g_loss


def _scalar(value) -> float:
    return value.item() if torch.is_tensor(value) else float(value)


def total_loss(l_r, l_c, l_b, l_m, weights: LossWeights, epoch: int,
               chosen_pairing: str = DIRECT, beta_b_override: float = None):
    """Compose the scheduled objective; returns (total tensor, LossBreakdown).

    `beta_b_override` substitutes the biometric weight (used by the
    auto-scale mode); the schedule still applies to beta_C and beta_M.
    """
    parts = {"L_R": l_r, "L_C": l_c, "L_B": l_b, "L_M": l_m}
    for name, value in parts.items():
        if not math.isfinite(_scalar(value)):
            raise NonFiniteLossError(f"loss component {name} is non-finite")
    beta_c, beta_b, beta_m = weights.effective(epoch)
    if beta_b_override is not None:
        beta_b = beta_b_override
    total = l_r + beta_c * l_c + beta_b * l_b + beta_m * l_m
    breakdown = LossBreakdown(
        l_r=_scalar(l_r), l_c=_scalar(l_c), l_b=_scalar(l_b), l_m=_scalar(l_m),
        total=_scalar(total), chosen_pairing=chosen_pairing,
    )
    return total, breakdown
