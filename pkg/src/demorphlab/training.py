"""Adversarial training loop, checkpointing, and single-image de-morphing.

One logical training thread owns all parameters. Per batch: the generator
decomposes the morph, the three discriminators update on their own losses
with the generator outputs detached, then the generator updates on the
composite objective with the discriminators frozen. The comparator is
frozen for the whole run; gradients flow through it into the generator
only.

All per-epoch randomness (batch order, mixture weights) derives from
(seed, epoch), so resuming from an epoch-boundary checkpoint replays the
exact uninterrupted trajectory.
"""

import csv
import hashlib
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import iter_batches, load_manifest, preprocess
from .errors import CheckpointError, ConfigError, ManifestError, NonFiniteLossError, StructuralError
from .image_io import load_image
from .losses import (
    DIRECT,
    LossBreakdown,
    LossWeights,
    crossroad_biometric_loss,
    crossroad_reconstruction_loss,
    decomposition_critic_loss,
    markovian_loss,
    total_loss,
)
from .networks import (
    ConvEmbeddingComparator,
    DecompositionCritic,
    GeneratorSpec,
    PatchDiscriminatorPair,
    UNetGenerator,
    default_network_sizes,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


@dataclass
class TrainConfig:
    """Full training recipe; defaults reproduce the reference setup.

    (300 epochs, Adam at 1e-4 with default moments, beta_C/beta_M warmup
    schedule, beta_B = 1e12.) Desk-scale runs override epochs, image_size,
    and batch_size.
    """

    train_manifest: str = None
    out_dir: str = "runs/demorph"
    epochs: int = 300
    learning_rate: float = 1e-4
    adam_betas: tuple = (0.9, 0.999)
    batch_size: int = 8
    image_size: int = 256
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 25
    depth: int = None  # None -> derived from image_size
    base_width: int = None
    embed_dim: int = 128
    comparator_seed: int = 0
    deterministic: bool = False
    auto_scale_beta_b: bool = False
    device: str = "cpu"

    def network_sizes(self):
        d_depth, d_width = default_network_sizes(self.image_size)
        return (self.depth or d_depth, self.base_width or d_width)


@dataclass
class TrainState:
    config: TrainConfig
    generator: UNetGenerator
    critic: DecompositionCritic
    patch_pair: PatchDiscriminatorPair
    comparator: ConvEmbeddingComparator
    opt_g: torch.optim.Adam
    opt_c: torch.optim.Adam
    opt_m1: torch.optim.Adam
    opt_m2: torch.optim.Adam
    epoch: int = 0  # completed epochs
    generator_steps: int = 0
    discriminator_steps: int = 0
    beta_b_scale: float = None  # resolved auto-scale weight, once computed


@dataclass
class DemorphResult:
    """Unordered output pair for one input plus its biometric distances."""

    output_1: np.ndarray
    output_2: np.ndarray
    d_o1_input: float
    d_o2_input: float
    inter_output_distance: float
    sample_id: str = None
    label: str = None
    gt1_path: Path = None
    gt2_path: Path = None


def config_hash(config: TrainConfig) -> str:
    payload = asdict(config)
    payload["weights"].pop("schedule", None)
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def build_state(config: TrainConfig, comparator=None) -> TrainState:
    """Seeded construction of all four networks and their optimizers."""
    torch.manual_seed(config.seed)
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
    depth, width = config.network_sizes()
    generator = UNetGenerator(
        GeneratorSpec(depth=depth, base_width=width), image_size=config.image_size
    ).to(config.device)
    critic = DecompositionCritic(width).to(config.device)
    patch_pair = PatchDiscriminatorPair(width).to(config.device)
    if comparator is None:
        comparator = ConvEmbeddingComparator(
            embed_dim=config.embed_dim, seed=config.comparator_seed
        )
    comparator = comparator.to(config.device).freeze()
    lr, betas = config.learning_rate, tuple(config.adam_betas)
    return TrainState(
        config=config,
        generator=generator,
        critic=critic,
        patch_pair=patch_pair,
        comparator=comparator,
        opt_g=torch.optim.Adam(generator.parameters(), lr=lr, betas=betas),
        opt_c=torch.optim.Adam(critic.parameters(), lr=lr, betas=betas),
        opt_m1=torch.optim.Adam(patch_pair.d1.parameters(), lr=lr, betas=betas),
        opt_m2=torch.optim.Adam(patch_pair.d2.parameters(), lr=lr, betas=betas),
    )


def save_checkpoint(state: TrainState, path, last_losses: LossBreakdown = None) -> Path:
    """Single-archive checkpoint plus a plain-text metadata sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    config_payload = asdict(state.config)
    if config_payload["weights"].get("schedule") is not None:
        log.warning("custom beta schedule is not serialized; checkpoint stores defaults")
        config_payload["weights"]["schedule"] = None
    payload = {
        "format": CHECKPOINT_FORMAT,
        "epoch": state.epoch,
        "generator_steps": state.generator_steps,
        "discriminator_steps": state.discriminator_steps,
        "beta_b_scale": state.beta_b_scale,
        "config": config_payload,
        "generator": state.generator.state_dict(),
        "critic": state.critic.state_dict(),
        "patch_pair": state.patch_pair.state_dict(),
        "comparator": state.comparator.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_c": state.opt_c.state_dict(),
        "opt_m1": state.opt_m1.state_dict(),
        "opt_m2": state.opt_m2.state_dict(),
    }
    torch.save(payload, path)
    meta = [f"epoch: {state.epoch}", f"config_hash: {config_hash(state.config)}"]
    if last_losses is not None:
        meta += [
            f"L_R: {last_losses.l_r:.8g}",
            f"L_C: {last_losses.l_c:.8g}",
            f"L_B: {last_losses.l_b:.8g}",
            f"L_M: {last_losses.l_m:.8g}",
            f"total: {last_losses.total:.8g}",
        ]
    path.with_suffix(".meta.txt").write_text("\n".join(meta) + "\n")
    return path


def load_checkpoint(path, device: str = None) -> TrainState:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unrecognized checkpoint format in {path}")
    cfg = dict(payload["config"])
    weights = dict(cfg.pop("weights"))
    weights.pop("schedule", None)
    cfg["adam_betas"] = tuple(cfg["adam_betas"])
    if device is not None:
        cfg["device"] = device
    config = TrainConfig(**cfg, weights=LossWeights(**weights))
    state = build_state(config)
    try:
        state.generator.load_state_dict(payload["generator"])
        state.critic.load_state_dict(payload["critic"])
        state.patch_pair.load_state_dict(payload["patch_pair"])
        state.comparator.load_state_dict(payload["comparator"])
        state.opt_g.load_state_dict(payload["opt_g"])
        state.opt_c.load_state_dict(payload["opt_c"])
        state.opt_m1.load_state_dict(payload["opt_m1"])
        state.opt_m2.load_state_dict(payload["opt_m2"])
    except (KeyError, RuntimeError) as exc:
        raise CheckpointError(f"incompatible checkpoint {path}: {exc}") from exc
    state.epoch = int(payload["epoch"])
    state.generator_steps = int(payload["generator_steps"])
    state.discriminator_steps = int(payload["discriminator_steps"])
    state.beta_b_scale = payload["beta_b_scale"]
    return state


@contextmanager
def _frozen(*modules):
    saved = []
    for m in modules:
        for p in m.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0x7FFFFFFF, epoch])


def _load_train_records(config: TrainConfig):
    if config.train_manifest is None:
        raise ConfigError("train_manifest is required")
    records = load_manifest(config.train_manifest)
    morphed = [r for r in records if r.label == "morphed"]
    dropped = len(records) - len(morphed)
    if dropped:
        log.warning("excluding %d non-morphed sample(s) from training", dropped)
    if not morphed:
        raise ManifestError(f"no morphed samples in {config.train_manifest}")
    return morphed


def train(config: TrainConfig, comparator=None, state: TrainState = None) -> TrainState:
    """Run (or continue) training; returns the final state.

    Pass `state` from load_checkpoint to resume; the remaining epochs of
    `state.config.epochs` are executed. Checkpoints land in
    `out_dir/checkpoints/`, the per-step loss log in `out_dir/loss_log.csv`.
    """
    if state is None:
        state = build_state(config, comparator=comparator)
    else:
        config = state.config
        if config.deterministic:
            torch.use_deterministic_algorithms(True)
    records = _load_train_records(config)
    out_dir = Path(config.out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "loss_log.csv"
    new_log = not log_path.exists() or state.epoch == 0
    mode = "w" if new_log else "a"

    device = config.device
    last_breakdown = None
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if new_log:
            writer.writerow(LossBreakdown.LOG_HEADER)
        for epoch in range(state.epoch, config.epochs):
            rng = _epoch_rng(config.seed, epoch)
            order = rng.permutation(len(records))
            for step, batch in enumerate(
                iter_batches(records, config.batch_size, (config.image_size,) * 2, order=order)
            ):
                x = batch.inputs.to(device)
                i1 = batch.gt1.to(device)
                i2 = batch.gt2.to(device)
                w_mix = float(rng.uniform())

                o1, o2 = state.generator(x)
                l_r, pairing = crossroad_reconstruction_loss(i1, i2, o1, o2)
                ro1, ro2 = (o1, o2) if pairing == DIRECT else (o2, o1)

                # discriminator phase: generator outputs detached
                d_c_loss, _ = decomposition_critic_loss(
                    i1, i2, o1.detach(), o2.detach(), state.critic, w_mix
                )
                d_m_loss, _ = markovian_loss(
                    i1, i2, ro1.detach(), ro2.detach(), x, state.patch_pair.d1, state.patch_pair.d2
                )
                if not (math.isfinite(d_c_loss.item()) and math.isfinite(d_m_loss.item())):
                    raise NonFiniteLossError(
                        f"discriminator loss non-finite at epoch {epoch} step {step}"
                    )
                state.opt_c.zero_grad()
                d_c_loss.backward()
                state.opt_c.step()
                state.opt_m1.zero_grad()
                state.opt_m2.zero_grad()
                d_m_loss.backward()
                state.opt_m1.step()
                state.opt_m2.step()
                state.discriminator_steps += 1

                # generator phase: rescore with updated, frozen discriminators
                with _frozen(state.critic, state.patch_pair):
                    _, g_c_loss = decomposition_critic_loss(
                        i1, i2, o1, o2, state.critic, w_mix
                    )
                    _, g_m_loss = markovian_loss(
                        i1, i2, ro1, ro2, x, state.patch_pair.d1, state.patch_pair.d2
                    )
                    l_b = crossroad_biometric_loss(i1, i2, o1, o2, state.comparator)
                    if config.auto_scale_beta_b and state.beta_b_scale is None:
                        state.beta_b_scale = float(l_r.item() / max(l_b.item(), 1e-8))
                        log.info(
                            "auto-scaled beta_B = %.6g (L_R=%.4g, L_B=%.4g)",
                            state.beta_b_scale, l_r.item(), l_b.item(),
                        )
                    total, breakdown = total_loss(
                        l_r, g_c_loss, l_b, g_m_loss, config.weights, epoch,
                        chosen_pairing=pairing, beta_b_override=state.beta_b_scale,
                    )
                    state.opt_g.zero_grad()
                    total.backward()
                state.opt_g.step()
                state.generator_steps += 1
                last_breakdown = breakdown
                writer.writerow(breakdown.log_row(epoch, step))
            fh.flush()
            state.epoch = epoch + 1
            if state.epoch % config.checkpoint_every == 0 or state.epoch == config.epochs:
                save_checkpoint(
                    state, ckpt_dir / f"ckpt_ep{state.epoch:04d}.pt", last_breakdown
                )
    return state


def _to_model_tensor(x, image_size: int, device: str) -> torch.Tensor:
    if torch.is_tensor(x):
        t = x.float()
        if t.dim() == 3:
            t = t.unsqueeze(0)
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise StructuralError(f"expected HxWx3 image, got {arr.shape}")
        t = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float().unsqueeze(0)
    if t.shape[-2] != image_size or t.shape[-1] != image_size:
        raise StructuralError(
            f"input is {tuple(t.shape[-2:])}, model expects {image_size}x{image_size}"
        )
    return t.to(device)


def demorph(state, x, sample_id: str = None, label: str = None,
            gt1_path=None, gt2_path=None) -> DemorphResult:
    """Decompose one preprocessed image; pure inference.

    `state` is a TrainState or a checkpoint path. Returns the unordered
    output pair with comparator distances of each output to the input and
    between the two outputs.
    """
    if not isinstance(state, TrainState):
        state = load_checkpoint(state)
    config = state.config
    t = _to_model_tensor(x, config.image_size, config.device)
    state.generator.eval()
    with torch.no_grad():
        o1, o2 = state.generator(t)
        d1 = float(state.comparator.distance(o1, t)[0])
        d2 = float(state.comparator.distance(o2, t)[0])
        d12 = float(state.comparator.distance(o1, o2)[0])
    state.generator.train()

    def to_np(img):
        return img[0].cpu().numpy().transpose(1, 2, 0).astype(np.float64)

    return DemorphResult(
        output_1=to_np(o1),
        output_2=to_np(o2),
        d_o1_input=d1,
        d_o2_input=d2,
        inter_output_distance=d12,
        sample_id=sample_id,
        label=label,
        gt1_path=gt1_path,
        gt2_path=gt2_path,
    )


def demorph_record(state, record, crop_hook=None) -> DemorphResult:
    """Demorph one manifest SampleRecord (loads and preprocesses the input)."""
    if not isinstance(state, TrainState):
        state = load_checkpoint(state)
    size = (state.config.image_size,) * 2
    img = preprocess(load_image(record.input_path), size, crop_hook=crop_hook)
    return demorph(
        state,
        img,
        sample_id=Path(record.input_path).stem,
        label=record.label,
        gt1_path=record.gt1_path,
        gt2_path=record.gt2_path,
    )
