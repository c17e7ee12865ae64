"""Encoder-decoder Transformer for multilingual translation, written out in
full: sinusoidal positional encodings, multi-head attention with additive
-inf masks, post-norm residual blocks, teacher-forced training with pad-free
cross-entropy, greedy decoding, closed-form parameter accounting, and the
data-volume ablation harness.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, DataFormatError, TrainingDivergedError
from .nmtdata import (
    EOS,
    PAD,
    SOS,
    Batch,
    EncodedPair,
    ParallelPair,
    Vocabulary,
    build_vocabularies,
    collate_batch,
    encode_pair,
)
from .serialization import Checkpoint, LossHistory, save_checkpoint


@dataclass
class TransformerConfig:
    d_model: int = 512
    num_encoder_layers: int = 6
    num_decoder_layers: int = 6
    num_heads: int = 8
    head_size: int = 64
    ff_size: int = 2048
    dropout: float = 0.3
    max_seq_len: int = 5000

    def __post_init__(self):
        if self.d_model != self.num_heads * self.head_size:
            raise ConfigError(
                f"d_model ({self.d_model}) must equal num_heads*head_size "
                f"({self.num_heads}*{self.head_size})"
            )
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if min(self.num_encoder_layers, self.num_decoder_layers, self.ff_size, self.max_seq_len) < 1:
            raise ConfigError("layer counts, ff_size, and max_seq_len must be >= 1")


@dataclass
class NmtTrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 5
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")


@dataclass
class AblationRow:
    pairs_per_language: int
    min_val_loss: float
    # Full per-epoch history behind the minimum; debug only, never serialized.
    history: "LossHistory | None" = None


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """(max_len, d_model) float32; pe[p, 2i] = sin(p/10000^(2i/d)), odd = cos."""
    if d_model % 2:
        raise ConfigError(f"d_model must be even for sinusoidal encodings, got {d_model}")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / d_model)
    pe = np.zeros((max_len, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe.astype(np.float32)


class MultiHeadAttention(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        inner = cfg.num_heads * cfg.head_size
        self.num_heads = cfg.num_heads
        self.head_size = cfg.head_size
        self.wq = nn.Linear(cfg.d_model, inner)
        self.wk = nn.Linear(cfg.d_model, inner)
        self.wv = nn.Linear(cfg.d_model, inner)
        self.wo = nn.Linear(inner, cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, q_in: torch.Tensor, kv_in: torch.Tensor, mask: torch.Tensor | None) -> torch.Tensor:
        """mask is additive (0 or -inf), broadcastable to (B, heads, Tq, Tk)."""
        b, tq, _ = q_in.shape
        tk = kv_in.shape[1]
        q = self.wq(q_in).view(b, tq, self.num_heads, self.head_size).transpose(1, 2)
        k = self.wk(kv_in).view(b, tk, self.num_heads, self.head_size).transpose(1, 2)
        v = self.wv(kv_in).view(b, tk, self.num_heads, self.head_size).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_size)
        if mask is not None:
            scores = scores + mask
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(b, tq, self.num_heads * self.head_size)
        return self.wo(out)


class FeedForward(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.inner = nn.Linear(cfg.d_model, cfg.ff_size)
        self.outer = nn.Linear(cfg.ff_size, cfg.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(F.relu(self.inner(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg)
        self.ff = FeedForward(cfg)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, src_mask: torch.Tensor | None) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.attn(x, x, src_mask)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg)
        self.cross_attn = MultiHeadAttention(cfg)
        self.ff = FeedForward(cfg)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        causal_mask: torch.Tensor,
        memory_mask: torch.Tensor | None,
    ) -> torch.Tensor:
        x = self.norm1(x + self.drop(self.self_attn(x, x, causal_mask)))
        x = self.norm2(x + self.drop(self.cross_attn(x, memory, memory_mask)))
        return self.norm3(x + self.drop(self.ff(x)))


class Seq2SeqTransformer(nn.Module):
    def __init__(self, cfg: TransformerConfig, src_vocab_size: int, tgt_vocab_size: int):
        super().__init__()
        if min(src_vocab_size, tgt_vocab_size) < 5:
            raise ConfigError("vocabularies must hold at least the special tokens and one language tag")
        self.cfg = cfg
        self.src_vocab_size = src_vocab_size
        self.tgt_vocab_size = tgt_vocab_size
        self.src_embed = nn.Embedding(src_vocab_size, cfg.d_model)
        self.tgt_embed = nn.Embedding(tgt_vocab_size, cfg.d_model)
        bound = 1.0 / math.sqrt(cfg.d_model)
        nn.init.uniform_(self.src_embed.weight, -bound, bound)
        nn.init.uniform_(self.tgt_embed.weight, -bound, bound)
        self.register_buffer("pos_enc", torch.from_numpy(positional_encoding(cfg.max_seq_len, cfg.d_model)))
        self.embed_drop = nn.Dropout(cfg.dropout)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_encoder_layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_decoder_layers))
        self.out_proj = nn.Linear(cfg.d_model, tgt_vocab_size)
        self.scale = math.sqrt(cfg.d_model)

    def _embed(self, ids: torch.Tensor, table: nn.Embedding) -> torch.Tensor:
        t = ids.shape[1]
        if t > self.cfg.max_seq_len:
            raise DataFormatError(f"sequence length {t} exceeds max_seq_len {self.cfg.max_seq_len}")
        return self.embed_drop(table(ids) * self.scale + self.pos_enc[:t])

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor | None) -> torch.Tensor:
        mask = _pad_to_additive(src_pad)
        x = self._embed(src, self.src_embed)
        for layer in self.encoder_layers:
            x = layer(x, mask)
        return x

    def decode(
        self,
        dec_input: torch.Tensor,
        memory: torch.Tensor,
        tgt_pad: torch.Tensor | None,
        src_pad: torch.Tensor | None,
    ) -> torch.Tensor:
        t = dec_input.shape[1]
        causal = torch.full((t, t), float("-inf")).triu(1).view(1, 1, t, t)
        tgt_mask = _pad_to_additive(tgt_pad)
        if tgt_mask is not None:
            causal = causal + tgt_mask
        memory_mask = _pad_to_additive(src_pad)
        x = self._embed(dec_input, self.tgt_embed)
        for layer in self.decoder_layers:
            x = layer(x, memory, causal, memory_mask)
        return self.out_proj(x)

    def forward(
        self,
        src: torch.Tensor,
        dec_input: torch.Tensor,
        src_pad: torch.Tensor | None = None,
        tgt_pad: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return self.decode(dec_input, self.encode(src, src_pad), tgt_pad, src_pad)


def _pad_to_additive(pad: torch.Tensor | None) -> torch.Tensor | None:
    """Boolean (B, T) pad mask -> additive (B, 1, 1, T) with -inf at pads."""
    if pad is None:
        return None
    add = torch.zeros(pad.shape, dtype=torch.float32)
    add[pad] = float("-inf")
    return add[:, None, None, :]


def build_transformer(cfg: TransformerConfig, src_vocab_size: int, tgt_vocab_size: int) -> Seq2SeqTransformer:
    return Seq2SeqTransformer(cfg, src_vocab_size, tgt_vocab_size)


def forward_batch(model: Seq2SeqTransformer, batch: Batch, mode: str = "eval") -> torch.Tensor:
    """Logits (B, T, tgt_vocab) for a collated batch; dropout only in train."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be train or eval, got {mode!r}")
    model.train(mode == "train")
    src = torch.from_numpy(batch.src)
    dec_input = torch.from_numpy(batch.dec_input)
    src_pad = torch.from_numpy(batch.src_pad_mask)
    tgt_pad = torch.from_numpy(batch.tgt_pad_mask)
    if mode == "eval":
        with torch.no_grad():
            return model(src, dec_input, src_pad, tgt_pad)
    return model(src, dec_input, src_pad, tgt_pad)


def masked_loss(logits: torch.Tensor, dec_target: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over non-pad target tokens."""
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), dec_target.reshape(-1), ignore_index=PAD
    )


def count_parameters(cfg: TransformerConfig, src_vocab_size: int, tgt_vocab_size: int) -> int:
    """Closed-form trainable-parameter count of build_transformer's output."""
    d, h, dh, ff = cfg.d_model, cfg.num_heads, cfg.head_size, cfg.ff_size
    inner = h * dh
    attn = 3 * (d * inner + inner) + inner * d + d
    feed = d * ff + ff + ff * d + d
    norm = 2 * d
    enc_layer = attn + feed + 2 * norm
    dec_layer = 2 * attn + feed + 3 * norm
    embeddings = (src_vocab_size + tgt_vocab_size) * d
    out_proj = d * tgt_vocab_size + tgt_vocab_size
    return (
        embeddings
        + cfg.num_encoder_layers * enc_layer
        + cfg.num_decoder_layers * dec_layer
        + out_proj
    )


def _epoch_loss(model: Seq2SeqTransformer, pairs: list[EncodedPair], batch_size: int) -> float:
    model.eval()
    total, tokens = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            batch = collate_batch(pairs[start:start + batch_size])
            logits = model(
                torch.from_numpy(batch.src),
                torch.from_numpy(batch.dec_input),
                torch.from_numpy(batch.src_pad_mask),
                torch.from_numpy(batch.tgt_pad_mask),
            )
            target = torch.from_numpy(batch.dec_target)
            n_tok = int((target != PAD).sum())
            loss = F.cross_entropy(
                logits.reshape(-1, logits.shape[-1]), target.reshape(-1),
                ignore_index=PAD, reduction="sum",
            )
            total += float(loss)
            tokens += n_tok
    return total / max(tokens, 1)


def train_translator(
    pairs: list[EncodedPair],
    cfg: NmtTrainConfig,
    model_cfg: TransformerConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    val_pairs: list[EncodedPair] | None = None,
) -> tuple[Checkpoint, LossHistory]:
    """Teacher-forced training; returns best-validation checkpoint + history.

    When no validation set is given one is split off deterministically by
    seed; validation_fraction 0 evaluates on the training pairs themselves.
    """
    if not pairs:
        raise DataFormatError("training corpus is empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_pairs = list(pairs)
    if val_pairs is None:
        if cfg.validation_fraction > 0:
            order = rng.permutation(len(train_pairs))
            n_val = min(len(train_pairs) - 1, max(1, round(len(train_pairs) * cfg.validation_fraction)))
            val_pairs = [train_pairs[i] for i in order[:n_val]]
            train_pairs = [train_pairs[i] for i in order[n_val:]]
        else:
            val_pairs = train_pairs

    model = build_transformer(model_cfg, len(src_vocab.itos), len(tgt_vocab.itos))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    history = LossHistory()
    best_val = float("inf")
    best_state: dict[str, torch.Tensor] = {}
    best_epoch = 0

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = rng.permutation(len(train_pairs))
        total, tokens = 0.0, 0
        for start in range(0, len(perm), cfg.batch_size):
            batch = collate_batch([train_pairs[i] for i in perm[start:start + cfg.batch_size]])
            logits = model(
                torch.from_numpy(batch.src),
                torch.from_numpy(batch.dec_input),
                torch.from_numpy(batch.src_pad_mask),
                torch.from_numpy(batch.tgt_pad_mask),
            )
            target = torch.from_numpy(batch.dec_target)
            loss = masked_loss(logits, target)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            n_tok = int((target != PAD).sum())
            total += float(loss.detach()) * n_tok
            tokens += n_tok
        train_loss = total / max(tokens, 1)
        val_loss = _epoch_loss(model, val_pairs, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history.append(epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    arrays = {k: v.numpy().copy() for k, v in best_state.items()}
    checkpoint = Checkpoint(
        kind="translator",
        config={
            "model": asdict(model_cfg),
            "train": asdict(cfg),
            "src_vocab": {"size": len(src_vocab.itos), "content_hash": src_vocab.content_hash()},
            "tgt_vocab": {"size": len(tgt_vocab.itos), "content_hash": tgt_vocab.content_hash()},
        },
        arrays=arrays,
        meta={"epoch": best_epoch, "val_loss": best_val},
    )
    return checkpoint, history


def save_translator(path: str | Path, checkpoint: Checkpoint) -> None:
    save_checkpoint(path, checkpoint)


def translator_from_checkpoint(checkpoint: Checkpoint) -> Seq2SeqTransformer:
    if checkpoint.kind != "translator":
        raise DataFormatError(f"expected a translator checkpoint, got kind={checkpoint.kind!r}")
    model = build_transformer(
        TransformerConfig(**checkpoint.config["model"]),
        checkpoint.config["src_vocab"]["size"],
        checkpoint.config["tgt_vocab"]["size"],
    )
    model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in checkpoint.arrays.items()})
    model.eval()
    return model


def greedy_decode(
    model: Seq2SeqTransformer, src_ids: list[int], tgt_lang_tag: int, max_len: int = 64
) -> list[int]:
    """Argmax decoding from [sos, tag]; ties go to the lowest index. Returns
    [tag, tokens..., eos], or max_len tokens when eos never appears."""
    if max_len > model.cfg.max_seq_len:
        raise DataFormatError(f"max_len {max_len} exceeds max_seq_len {model.cfg.max_seq_len}")
    model.eval()
    src = torch.tensor([src_ids], dtype=torch.int64)
    with torch.no_grad():
        memory = model.encode(src, None)
        out = [tgt_lang_tag]
        while len(out) < max_len:
            dec_input = torch.tensor([[SOS] + out], dtype=torch.int64)
            logits = model.decode(dec_input, memory, None, None)
            next_id = int(np.argmax(logits[0, -1].numpy()))
            out.append(next_id)
            if next_id == EOS:
                break
    return out


def run_data_ablation(
    pairs: list[ParallelPair],
    sizes: list[int],
    model_cfg: TransformerConfig,
    train_cfg: NmtTrainConfig,
    holdout_per_language: int = 50,
    min_freq: int = 1,
) -> list[AblationRow]:
    """Train from scratch per size on deterministic subsamples; min val loss
    is measured on one held-out set shared across every size. Vocabulary is
    built once from the full corpus so losses are comparable."""
    if sizes != sorted(set(sizes)):
        raise ConfigError(f"sizes must be strictly increasing, got {sizes}")
    groups: dict[tuple[str, str], list[ParallelPair]] = {}
    for p in pairs:
        groups.setdefault((p.source_language, p.target_language), []).append(p)
    need = max(sizes) + holdout_per_language
    for key, grp in groups.items():
        if len(grp) < need:
            raise DataFormatError(
                f"language pair {key} has {len(grp)} pairs, ablation needs {need}"
            )

    src_vocab, tgt_vocab = build_vocabularies(pairs, min_freq=min_freq)
    rng = np.random.default_rng(train_cfg.seed)
    holdout: list[EncodedPair] = []
    pools: dict[tuple[str, str], list[ParallelPair]] = {}
    for key in sorted(groups):
        grp = groups[key]
        order = rng.permutation(len(grp))
        holdout.extend(encode_pair(grp[i], src_vocab, tgt_vocab) for i in order[:holdout_per_language])
        pools[key] = [grp[i] for i in order[holdout_per_language:]]

    rows = []
    for size in sizes:
        subset = []
        for key in sorted(pools):
            subset.extend(encode_pair(p, src_vocab, tgt_vocab) for p in pools[key][:size])
        cfg = NmtTrainConfig(**asdict(train_cfg))
        _, history = train_translator(subset, cfg, model_cfg, src_vocab, tgt_vocab, val_pairs=holdout)
        rows.append(
            AblationRow(
                pairs_per_language=size,
                min_val_loss=min(history.val_loss),
                history=history,
            )
        )
    return rows


def ablation_to_csv(rows: list[AblationRow], path: str | Path) -> None:
    lines = ["pairs_per_language,min_val_loss"]
    lines.extend(f"{r.pairs_per_language},{r.min_val_loss!r}" for r in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
