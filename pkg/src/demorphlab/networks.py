"""Network definitions: U-Net de-morpher, decomposition critic, Markovian
patch discriminator pair, and the pluggable differentiable face comparator.

The generator maps one image to two stacked RGB outputs; the critic scores
whole image pairs; each patch discriminator scores a grid of local patches
conditioned on the observed input. The comparator embeds images on the unit
sphere and measures identity via cosine distance; any differentiable
embedding network (e.g. a pretrained face recognizer) can be dropped in
behind the same interface.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, StructuralError


def default_network_sizes(image_size: int):
    """(depth, base_width) defaults: full scale at 256, desk scale at 64."""
    if image_size <= 64:
        return 4, 32
    if image_size <= 128:
        return 4, 48
    return 5, 64


def _check_divisible(image_size: int, depth: int):
    if image_size % (2 ** depth) != 0:
        raise ConfigError(
            f"image size {image_size} not divisible by 2^{depth}"
        )


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 3
    out_channels: int = 6
    depth: int = 5
    base_width: int = 64


class UNetGenerator(nn.Module):
    """U-Net encoder-decoder producing the unordered output pair (O1, O2).

    Output head is a sigmoid so both images live in [0, 1] like the input.
    """

    def __init__(self, spec: GeneratorSpec = GeneratorSpec(), image_size: int = 256):
        super().__init__()
        _check_divisible(image_size, spec.depth)
        self.spec = spec
        self.image_size = image_size

        widths = [min(spec.base_width * (2 ** i), spec.base_width * 8) for i in range(spec.depth)]
        downs = []
        in_ch = spec.in_channels
        for i, ch in enumerate(widths):
            block = [nn.Conv2d(in_ch, ch, 4, stride=2, padding=1)]
            if i > 0:
                block.append(nn.InstanceNorm2d(ch))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            downs.append(nn.Sequential(*block))
            in_ch = ch
        self.downs = nn.ModuleList(downs)

        ups = []
        for i in reversed(range(spec.depth)):
            # level i consumes the upsampled path concatenated with the
            # encoder skip at the same resolution (bottleneck level has none)
            in_ch = widths[i] if i == spec.depth - 1 else widths[i] * 2
            out_ch = widths[i - 1] if i > 0 else spec.base_width
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(in_ch, out_ch, 4, stride=2, padding=1),
                    nn.InstanceNorm2d(out_ch),
                    nn.ReLU(inplace=True),
                )
            )
        self.ups = nn.ModuleList(ups)
        self.head = nn.Conv2d(spec.base_width + spec.in_channels, spec.out_channels, 3, padding=1)

    def forward(self, x: torch.Tensor):
        if x.shape[-1] != self.image_size or x.shape[-2] != self.image_size:
            raise StructuralError(
                f"generator built for {self.image_size}^2, got {tuple(x.shape[-2:])}"
            )
        skips = []
        h = x
        for down in self.downs:
            h = down(h)
            skips.append(h)
        for i, up in enumerate(self.ups):
            level = len(self.ups) - 1 - i
            h = up(h if i == 0 else torch.cat([h, skips[level]], dim=1))
        out = torch.sigmoid(self.head(torch.cat([h, x], dim=1)))
        o1, o2 = torch.split(out, out.shape[1] // 2, dim=1)
        return o1, o2


class DecompositionCritic(nn.Module):
    """4-layer fully convolutional critic scoring an image pair.

    Takes the channel-concatenated pair and pools to a single (0, 1)
    realness score per pair: high means "looks like a genuine source pair".
    """

    def __init__(self, base_width: int = 64, in_channels: int = 6):
        super().__init__()
        w = base_width
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, w * 2, 4, stride=2, padding=1),
            nn.InstanceNorm2d(w * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w * 2, w * 4, 4, stride=2, padding=1),
            nn.InstanceNorm2d(w * 4),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w * 4, 1, 3, padding=1),
        )

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise StructuralError(f"pair shape mismatch: {a.shape} vs {b.shape}")
        logits = self.features(torch.cat([a, b], dim=1))
        return torch.sigmoid(logits.mean(dim=(1, 2, 3)))


class PatchDiscriminator(nn.Module):
    """3-layer Markovian discriminator over (candidate, condition) pairs.

    Returns a spatial grid of per-patch (0, 1) scores; the grid is strictly
    smaller than the input because of the strided layers.
    """

    def __init__(self, base_width: int = 64, in_channels: int = 6):
        super().__init__()
        w = base_width
        self.features = nn.Sequential(
            nn.Conv2d(in_channels, w, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, w * 2, 4, stride=2, padding=1),
            nn.InstanceNorm2d(w * 2),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w * 2, 1, 3, padding=1),
        )

    def forward(self, candidate: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        if candidate.shape != condition.shape:
            raise StructuralError(
                f"candidate/condition shape mismatch: {candidate.shape} vs {condition.shape}"
            )
        return torch.sigmoid(self.features(torch.cat([candidate, condition], dim=1)))


class PatchDiscriminatorPair(nn.Module):
    """Two independently parameterized patch discriminators, routed by index."""

    def __init__(self, base_width: int = 64, in_channels: int = 6):
        super().__init__()
        self.d1 = PatchDiscriminator(base_width, in_channels)
        self.d2 = PatchDiscriminator(base_width, in_channels)

    def forward(self, candidate, condition, which: int):
        if which not in (1, 2):
            raise ConfigError(f"patch discriminator index must be 1 or 2, got {which}")
        disc = self.d1 if which == 1 else self.d2
        return disc(candidate, condition)


class BiometricComparator(nn.Module):
    """Interface for differentiable identity comparison.

    Subclasses implement `embed`, mapping an image batch (B, 3, H, W) to
    unit-norm embeddings (B, D). `distance` is the cosine distance
    1 - <e_a, e_b> in [0, 2]; it is symmetric, zero for identical
    embeddings, and differentiable with respect to both images.
    """

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def distance(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise StructuralError(f"comparator shape mismatch: {a.shape} vs {b.shape}")
        ea = self.embed(a)
        eb = self.embed(b)
        return 1.0 - (ea * eb).sum(dim=1)

    def similarity(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        """Distance rescaled to a [0, 1] similarity (1 = identical)."""
        return 1.0 - self.distance(a, b) / 2.0

    def freeze(self):
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        return self


class ConvEmbeddingComparator(BiometricComparator):
    """Small convolutional embedding network.

    Resolution-agnostic via adaptive pooling. With `seed` fixed the weights
    are reproducible; left untrained it acts as a random smooth projection,
    which is already a usable oracle for loss plumbing, or `quick_fit` can
    shape it on a handful of labeled identities.
    """

    def __init__(self, embed_dim: int = 128, base_width: int = 16, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        w = base_width
        self.features = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(w, w * 2, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(w * 2, w * 4, 3, stride=2, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(4),
        )
        self.fc = nn.Linear(w * 4 * 16, embed_dim)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * 0.1)

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        feats = self.features(images).flatten(1)
        return F.normalize(self.fc(feats), dim=1)

    def quick_fit(self, images: torch.Tensor, subject_labels, epochs: int = 30, lr: float = 1e-3):
        """Brief metric-learning pass: pull same-subject embeddings together,
        push different subjects apart by a margin."""
        if torch.is_tensor(subject_labels):
            labels = subject_labels.long()
        else:
            index = {s: k for k, s in enumerate(dict.fromkeys(subject_labels))}
            labels = torch.tensor([index[s] for s in subject_labels])
        opt = torch.optim.Adam(self.parameters(), lr=lr)
        n = len(images)
        for _ in range(epochs):
            emb = self.embed(images)
            sim = emb @ emb.t()
            same = labels[:, None] == labels[None, :]
            eye = torch.eye(n, dtype=torch.bool)
            pos = sim[same & ~eye]
            neg = sim[~same]
            loss = (1.0 - pos).mean() if pos.numel() else sim.sum() * 0.0
            loss = loss + F.relu(neg - 0.2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        return self
