"""U-Net word detector: model, trainer, and mask inference.

Encoder-decoder with skip concatenations; each block is two 3x3 convolutions
(conv -> batch-norm -> ReLU) with dropout after the second convolution. The
head is a 1-channel sigmoid, trained with pixelwise binary cross-entropy.
"""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn

from .errors import ConfigError, DataFormatError, TrainingDivergedError
from .serialization import Checkpoint, LossHistory, save_checkpoint
from .synthgen import AugmentConfig, DatasetManifest, SyntheticSample, augment_sample


@dataclass
class UNetConfig:
    input_size: tuple[int, int, int] = (512, 512, 3)  # (H, W, C)
    encoder_depth: int = 4
    base_channels: int = 64
    batch_norm: bool = True
    dropout: float = 0.3
    kernel_size: int = 3

    def __post_init__(self):
        self.input_size = tuple(self.input_size)
        h, w, c = self.input_size
        if self.encoder_depth < 1:
            raise ConfigError(f"encoder_depth must be >= 1, got {self.encoder_depth}")
        factor = 2**self.encoder_depth
        if h % factor or w % factor:
            raise ConfigError(f"input {h}x{w} must be a multiple of {factor} for depth {self.encoder_depth}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if c < 1 or self.base_channels < 1:
            raise ConfigError("channel counts must be positive")


@dataclass
class DetectorTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    validation_fraction: float = 0.2
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in (0, 1), got {self.validation_fraction}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


class _DoubleConv(nn.Module):
    def __init__(self, c_in: int, c_out: int, cfg: UNetConfig):
        super().__init__()
        pad = cfg.kernel_size // 2
        layers: list[nn.Module] = [nn.Conv2d(c_in, c_out, cfg.kernel_size, padding=pad)]
        if cfg.batch_norm:
            layers.append(nn.BatchNorm2d(c_out))
        layers.append(nn.ReLU(inplace=True))
        layers.append(nn.Conv2d(c_out, c_out, cfg.kernel_size, padding=pad))
        if cfg.batch_norm:
            layers.append(nn.BatchNorm2d(c_out))
        layers.append(nn.ReLU(inplace=True))
        if cfg.dropout > 0:
            layers.append(nn.Dropout2d(cfg.dropout))
        self.block = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class UNet(nn.Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * 2**i for i in range(cfg.encoder_depth)]
        self.encoders = nn.ModuleList()
        c_prev = cfg.input_size[2]
        for c in chans:
            self.encoders.append(_DoubleConv(c_prev, c, cfg))
            c_prev = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _DoubleConv(c_prev, c_prev * 2, cfg)
        self.upsamples = nn.ModuleList()
        self.decoders = nn.ModuleList()
        c_prev *= 2
        for c in reversed(chans):
            self.upsamples.append(nn.ConvTranspose2d(c_prev, c, kernel_size=2, stride=2))
            self.decoders.append(_DoubleConv(c * 2, c, cfg))
            c_prev = c
        self.head = nn.Conv2d(c_prev, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) in [0,1] -> per-pixel text probability (B, 1, H, W)."""
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamples, self.decoders, reversed(skips)):
            x = up(x)
            x = dec(torch.cat([skip, x], dim=1))
        return torch.sigmoid(self.head(x))


def build_unet(cfg: UNetConfig) -> UNet:
    return UNet(cfg)


def _to_model_input(image: np.ndarray, cfg: UNetConfig) -> np.ndarray:
    """uint8 grayscale or RGB array -> float32 (C, H, W) at the model size."""
    h, w, c = cfg.input_size
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], c, axis=2)
    elif image.shape[2] != c:
        if image.shape[2] == 1:
            image = np.repeat(image, c, axis=2)
        else:
            image = np.repeat(image.mean(axis=2, keepdims=True), c, axis=2)
    if image.shape[:2] != (h, w):
        pil = Image.fromarray(image.astype(np.uint8), mode="RGB" if c == 3 else None)
        image = np.asarray(pil.resize((w, h), Image.BILINEAR))
    return (image.astype(np.float32) / 255.0).transpose(2, 0, 1)


def _resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if mask.shape == size:
        return mask
    pil = Image.fromarray(mask.astype(np.uint8), mode="L")
    return np.asarray(pil.resize((size[1], size[0]), Image.NEAREST))


def predict_mask(model: UNet, image: np.ndarray) -> np.ndarray:
    """Probability map in [0,1] with the same spatial shape as `image`.

    Off-size inputs are resized bilinearly into the model and the probability
    map is carried back with nearest-neighbor sampling.
    """
    if image.ndim not in (2, 3):
        raise DataFormatError(f"image must be 2-D or 3-D, got shape {image.shape}")
    orig = image.shape[:2]
    x = torch.from_numpy(_to_model_input(image, model.cfg)[None])
    was_training = model.training
    model.eval()
    with torch.no_grad():
        prob = model(x)[0, 0].numpy()
    if was_training:
        model.train()
    if orig != prob.shape:
        prob = _resize_prob(prob, orig)
    return prob.astype(np.float32)


def _resize_prob(prob: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    pil = Image.fromarray(prob.astype(np.float32), mode="F").resize((size[1], size[0]), Image.NEAREST)
    return np.asarray(pil)


def binarize_mask(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    return np.where(prob >= threshold, 255, 0).astype(np.uint8)


def _load_training_arrays(manifest: DatasetManifest) -> tuple[list[np.ndarray], list[np.ndarray], list[str]]:
    images, masks, texts = [], [], []
    for i in range(len(manifest)):
        img = np.asarray(Image.open(manifest.image_path(i)))
        msk = np.asarray(Image.open(manifest.mask_path(i)))
        if msk.ndim != 2:
            raise DataFormatError(f"mask {manifest.mask_path(i)} is not single-channel")
        if img.shape[:2] != msk.shape:
            raise DataFormatError(f"image/mask shape mismatch for sample {i}")
        images.append(img)
        masks.append(np.where(msk >= 128, 255, 0).astype(np.uint8))
        texts.append(manifest.label_path(i).read_text(encoding="utf-8").strip())
    return images, masks, texts


def train_detector(
    manifest: DatasetManifest,
    cfg: DetectorTrainConfig,
    unet: UNetConfig,
    augment: AugmentConfig | None = None,
) -> tuple[Checkpoint, LossHistory]:
    """Train on manifest images/masks; returns the best-validation checkpoint
    and per-epoch loss history. Augmentation, when given, touches only the
    training split."""
    if len(manifest) == 0:
        raise DataFormatError("manifest is empty")
    images, masks, texts = _load_training_arrays(manifest)
    n = len(images)
    n_val = min(n - 1, max(1, round(n * cfg.validation_fraction)))
    order = np.random.default_rng(cfg.seed).permutation(n)
    val_idx = order[:n_val]
    train_idx = order[n_val:]

    h, w, _ = unet.input_size

    def prep(i: int, image: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = _to_model_input(image, unet)
        m = _resize_mask(mask, (h, w)).astype(np.float32) / 255.0
        return x, m[None]

    val_x = torch.from_numpy(np.stack([prep(i, images[i], masks[i])[0] for i in val_idx]))
    val_y = torch.from_numpy(np.stack([prep(i, images[i], masks[i])[1] for i in val_idx]))

    torch.manual_seed(cfg.seed)
    model = build_unet(unet)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    bce = nn.BCELoss()
    history = LossHistory()
    best_val = float("inf")
    best_state: dict[str, torch.Tensor] = {}
    best_epoch = 0
    shuffle_rng = np.random.default_rng(cfg.seed + 1)

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = shuffle_rng.permutation(len(train_idx))
        total, weight = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            chunk = [int(train_idx[j]) for j in perm[start:start + cfg.batch_size]]
            xs, ys = [], []
            for i in chunk:
                image, mask = images[i], masks[i]
                if augment is not None:
                    aug_rng = random.Random(cfg.seed * 1_000_003 + epoch * 131 + i)
                    sample = SyntheticSample(image=image, mask=mask, text=texts[i] or "x",
                                             language="en", word_boxes=[])
                    sample = augment_sample(sample, aug_rng, augment)
                    image, mask = sample.image, sample.mask
                x, m = prep(i, image, mask)
                xs.append(x)
                ys.append(m)
            bx = torch.from_numpy(np.stack(xs))
            by = torch.from_numpy(np.stack(ys))
            opt.zero_grad()
            loss = bce(model(bx), by)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(chunk)
            weight += len(chunk)
        train_loss = total / weight

        model.eval()
        with torch.no_grad():
            v_total, v_weight = 0.0, 0
            for start in range(0, len(val_idx), cfg.batch_size):
                vx = val_x[start:start + cfg.batch_size]
                vy = val_y[start:start + cfg.batch_size]
                v_loss = bce(model(vx), vy)
                v_total += float(v_loss) * len(vx)
                v_weight += len(vx)
            val_loss = v_total / v_weight
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.append(epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    arrays = {k: v.numpy().copy() for k, v in best_state.items()}
    checkpoint = Checkpoint(
        kind="detector",
        config={"unet": asdict(unet), "train": asdict(cfg)},
        arrays=arrays,
        meta={
            "epoch": best_epoch,
            "val_loss": best_val,
            "val_indices": sorted(int(i) for i in val_idx),
        },
    )
    return checkpoint, history


def save_detector(path: str | Path, checkpoint: Checkpoint) -> None:
    save_checkpoint(path, checkpoint)


def detector_from_checkpoint(checkpoint: Checkpoint) -> UNet:
    if checkpoint.kind != "detector":
        raise DataFormatError(f"expected a detector checkpoint, got kind={checkpoint.kind!r}")
    cfg_dict = dict(checkpoint.config["unet"])
    cfg_dict["input_size"] = tuple(cfg_dict["input_size"])
    model = build_unet(UNetConfig(**cfg_dict))
    state = {k: torch.from_numpy(v.copy()) for k, v in checkpoint.arrays.items()}
    model.load_state_dict(state)
    model.eval()
    return model
