"""Transformer architecture, training, and decoding tests."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest
import torch

from conftest import TINY_MODEL, wordlist_pairs
from docutrans import nmtdata as nd
from docutrans import transformer as tr
from docutrans.errors import ConfigError, DataFormatError
from docutrans.nmtdata import EOS, PAD, SOS


def tiny_config(**overrides) -> tr.TransformerConfig:
    settings = dict(
        d_model=32,
        num_encoder_layers=2,
        num_decoder_layers=2,
        num_heads=4,
        head_size=8,
        ff_size=64,
        dropout=0.0,
        max_seq_len=64,
    )
    settings.update(overrides)
    return tr.TransformerConfig(**settings)


# ---------------------------------------------------------------------------
# Config and positional encoding


def test_config_dimension_consistency():
    with pytest.raises(ConfigError):
        tiny_config(d_model=33)  # 33 != 4 * 8
    with pytest.raises(ConfigError):
        tiny_config(dropout=1.0)
    with pytest.raises(ConfigError):
        tiny_config(num_heads=0)


def test_positional_encoding_formula():
    d_model = 10
    pe = tr.positional_encoding(16, d_model)
    assert pe.shape == (16, d_model)
    assert pe.dtype == np.float32
    for pos in (0, 1, 7, 15):
        for i in range(d_model // 2):
            angle = pos / 10000 ** (2 * i / d_model)
            assert pe[pos, 2 * i] == pytest.approx(math.sin(angle), abs=1e-6)
            assert pe[pos, 2 * i + 1] == pytest.approx(math.cos(angle), abs=1e-6)


def test_positional_encoding_rejects_odd_dimension():
    with pytest.raises(ConfigError):
        tr.positional_encoding(8, 7)


# ---------------------------------------------------------------------------
# Parameter accounting


def test_count_parameters_matches_instantiation():
    rng = random.Random(71)
    for _ in range(20):
        heads = rng.choice([1, 2, 4])
        head_size = rng.choice([4, 8, 16])
        cfg = tr.TransformerConfig(
            d_model=heads * head_size,
            num_encoder_layers=rng.randint(1, 3),
            num_decoder_layers=rng.randint(1, 3),
            num_heads=heads,
            head_size=head_size,
            ff_size=rng.choice([16, 32, 64]),
            dropout=0.1,
            max_seq_len=32,
        )
        src_size, tgt_size = rng.randint(10, 60), rng.randint(10, 60)
        model = tr.build_transformer(cfg, src_size, tgt_size)
        assert sum(p.numel() for p in model.parameters()) == tr.count_parameters(
            cfg, src_size, tgt_size
        )


def test_default_config_lands_near_sixty_million():
    n = tr.count_parameters(tr.TransformerConfig(), 10_000, 10_000)
    assert n == 59_508_496
    assert 55_000_000 <= n <= 70_000_000


# ---------------------------------------------------------------------------
# Masking


@pytest.fixture(scope="module")
def eval_model():
    torch.manual_seed(0)
    model = tr.build_transformer(tiny_config(), 30, 30)
    model.eval()
    return model


def test_decoder_causality_is_exact(eval_model):
    src = torch.tensor([[SOS, 5, 6, 7, EOS]])
    dec = torch.tensor([[SOS, 8, 9, 10, 11, 12]])
    with torch.no_grad():
        base = eval_model(src, dec)
    for j in range(1, dec.shape[1]):
        perturbed = dec.clone()
        perturbed[0, j] = 13
        with torch.no_grad():
            out = eval_model(src, perturbed)
        # Bitwise equality before position j; the change must land at >= j.
        assert torch.equal(out[0, :j], base[0, :j])
        assert not torch.equal(out[0, j:], base[0, j:])


def test_pad_invariance_of_logits(eval_model):
    src = torch.tensor([[SOS, 4, 5, EOS]])
    dec = torch.tensor([[SOS, 6, 7]])
    src_padded = torch.tensor([[SOS, 4, 5, EOS, PAD, PAD, PAD]])
    dec_padded = torch.tensor([[SOS, 6, 7, PAD, PAD]])
    with torch.no_grad():
        plain = eval_model(src, dec)
        padded = eval_model(
            src_padded,
            dec_padded,
            src_pad=(src_padded == PAD),
            tgt_pad=(dec_padded == PAD),
        )
    assert (plain[0] - padded[0, : dec.shape[1]]).abs().max().item() <= 1e-5


def test_masked_loss_ignores_pad_positions(eval_model):
    src = torch.tensor([[SOS, 4, 5, EOS, PAD, PAD]])
    dec = torch.tensor([[SOS, 6, 7, PAD, PAD]])
    with torch.no_grad():
        logits = eval_model(src, dec, src_pad=(src == PAD), tgt_pad=(dec == PAD))
    target = torch.tensor([[6, 7, EOS, PAD, PAD]])
    garbled = torch.tensor([[6, 7, EOS, PAD, PAD]]).clone()
    base = tr.masked_loss(logits, target).item()
    # Replacing logits at padded positions must not change the loss.
    noisy = logits.clone()
    noisy[0, 3:, :] += 100.0
    assert abs(tr.masked_loss(noisy, garbled).item() - base) <= 1e-6


def test_forward_batch_mode_validation(eval_model):
    pairs = wordlist_pairs(4, seed=77)
    sv, tv = nd.build_vocabularies(pairs, min_freq=1)
    model = tr.build_transformer(tiny_config(), len(sv), len(tv))
    batch = nd.collate_batch([nd.encode_pair(p, sv, tv) for p in pairs])
    logits = tr.forward_batch(model, batch, mode="eval")
    assert logits.shape[:2] == batch.dec_input.shape
    assert logits.shape[2] == len(tv)
    with pytest.raises(ConfigError):
        tr.forward_batch(model, batch, mode="predict")


def test_dropout_only_in_training_mode():
    torch.manual_seed(1)
    model = tr.build_transformer(tiny_config(dropout=0.5), 30, 30)
    src = torch.tensor([[SOS, 4, 5, EOS]])
    dec = torch.tensor([[SOS, 6, 7]])
    model.eval()
    with torch.no_grad():
        a = model(src, dec)
        b = model(src, dec)
    assert torch.equal(a, b)
    model.train()
    with torch.no_grad():
        c = model(src, dec)
        d = model(src, dec)
    assert not torch.equal(c, d)


def test_sequence_length_cap_enforced():
    model = tr.build_transformer(tiny_config(max_seq_len=8), 30, 30)
    long_src = torch.tensor([[SOS] + [4] * 10 + [EOS]])
    with pytest.raises(DataFormatError):
        model(long_src, torch.tensor([[SOS, 5]]))


# ---------------------------------------------------------------------------
# Greedy decoding


class ScriptedModel:
    """Stand-in whose next token depends only on the decoder length."""

    cfg = tiny_config(max_seq_len=64)

    def __init__(self, script: dict[int, int], vocab_size: int = 20):
        self.script = script
        self.vocab_size = vocab_size

    def eval(self):
        return self

    def encode(self, src, src_pad=None):
        return torch.zeros(1, src.shape[1], 4)

    def decode(self, dec_input, memory, src_pad=None, tgt_pad=None):
        logits = torch.zeros(1, dec_input.shape[1], self.vocab_size)
        logits[0, -1, self.script.get(dec_input.shape[1], EOS)] = 5.0
        return logits


def test_greedy_decode_follows_argmax_and_stops_at_eos():
    model = ScriptedModel({2: 7, 3: 9, 4: 7, 5: EOS})
    out = tr.greedy_decode(model, [SOS, 4, 5, EOS], tgt_lang_tag=6, max_len=16)
    assert out == [6, 7, 9, 7, EOS]


def test_greedy_decode_tie_breaks_to_lowest_index():
    class Flat(ScriptedModel):
        def decode(self, dec_input, memory, src_pad=None, tgt_pad=None):
            return torch.zeros(1, dec_input.shape[1], self.vocab_size)

    out = tr.greedy_decode(Flat({}), [SOS, 4, EOS], tgt_lang_tag=6, max_len=5)
    assert out == [6, 0, 0, 0, 0]


def test_greedy_decode_respects_max_len():
    model = ScriptedModel({})  # always emits EOS immediately

    out = tr.greedy_decode(model, [SOS, 4, EOS], tgt_lang_tag=6, max_len=3)
    assert out[0] == 6
    assert len(out) <= 3


# ---------------------------------------------------------------------------
# Training


def make_training_setup(n_pairs: int = 24, seed: int = 80):
    pairs = wordlist_pairs(n_pairs, seed=seed)
    sv, tv = nd.build_vocabularies(pairs, min_freq=1)
    encoded = [nd.encode_pair(p, sv, tv) for p in pairs]
    return pairs, encoded, sv, tv


def test_train_translator_history_and_best_checkpoint():
    _, encoded, sv, tv = make_training_setup()
    cfg = tr.NmtTrainConfig(
        learning_rate=1e-3, batch_size=8, epochs=4, validation_fraction=0.25, seed=2
    )
    ckpt, history = tr.train_translator(encoded, cfg, tiny_config(), sv, tv)
    assert len(history.train_loss) == 4
    assert len(history.val_loss) == 4
    assert all(np.isfinite(history.train_loss))
    assert ckpt.meta["val_loss"] == min(history.val_loss)
    assert ckpt.meta["epoch"] == history.val_loss.index(min(history.val_loss)) + 1
    assert ckpt.kind == "translator"
    assert ckpt.config["src_vocab"]["content_hash"] == sv.content_hash()
    assert ckpt.config["tgt_vocab"]["size"] == len(tv)


def test_train_translator_deterministic():
    _, encoded, sv, tv = make_training_setup()
    cfg = tr.NmtTrainConfig(
        learning_rate=1e-3, batch_size=8, epochs=3, validation_fraction=0.25, seed=3
    )
    _, h1 = tr.train_translator(encoded, cfg, tiny_config(dropout=0.1), sv, tv)
    _, h2 = tr.train_translator(encoded, cfg, tiny_config(dropout=0.1), sv, tv)
    assert h1.train_loss == h2.train_loss
    assert h1.val_loss == h2.val_loss


def test_translator_checkpoint_round_trip(tmp_path):
    pairs, encoded, sv, tv = make_training_setup(12)
    cfg = tr.NmtTrainConfig(
        learning_rate=1e-3, batch_size=8, epochs=2, validation_fraction=0.0, seed=4
    )
    ckpt, _ = tr.train_translator(encoded, cfg, tiny_config(), sv, tv)
    path = tmp_path / "t.ckpt"
    tr.save_translator(path, ckpt)
    from docutrans.serialization import load_checkpoint

    model = tr.translator_from_checkpoint(load_checkpoint(path))
    original = tr.translator_from_checkpoint(ckpt)
    src = torch.tensor([encoded[0].src_ids])
    dec = torch.tensor([encoded[0].dec_input_ids])
    with torch.no_grad():
        assert torch.equal(model(src, dec), original(src, dec))


def test_translator_checkpoint_kind_guard():
    from docutrans.serialization import Checkpoint

    bogus = Checkpoint(kind="detector", config={}, arrays={}, meta={})
    with pytest.raises(DataFormatError):
        tr.translator_from_checkpoint(bogus)


def test_empty_corpus_rejected():
    _, _, sv, tv = make_training_setup(4)
    cfg = tr.NmtTrainConfig(epochs=1)
    with pytest.raises(DataFormatError):
        tr.train_translator([], cfg, tiny_config(), sv, tv)


# ---------------------------------------------------------------------------
# Ablation plumbing


def test_ablation_requires_enough_pairs():
    pairs = wordlist_pairs(30, seed=88, unique=False)
    with pytest.raises(DataFormatError):
        tr.run_data_ablation(
            pairs, [100], tiny_config(), tr.NmtTrainConfig(epochs=1), holdout_per_language=50
        )


def test_ablation_sizes_must_increase():
    pairs = wordlist_pairs(30, seed=88, unique=False)
    with pytest.raises(ConfigError):
        tr.run_data_ablation(
            pairs, [10, 10], tiny_config(), tr.NmtTrainConfig(epochs=1), holdout_per_language=5
        )


def test_ablation_rows_and_csv(tmp_path):
    pairs = wordlist_pairs(40, seed=89, unique=False)
    cfg = tr.NmtTrainConfig(
        learning_rate=1e-3, batch_size=8, epochs=1, validation_fraction=0.1, seed=6
    )
    rows = tr.run_data_ablation(
        pairs, [5, 20], tiny_config(), cfg, holdout_per_language=10, min_freq=1
    )
    assert [r.pairs_per_language for r in rows] == [5, 20]
    assert all(np.isfinite(r.min_val_loss) for r in rows)
    assert all(r.history is not None for r in rows)
    out = tmp_path / "ablation.csv"
    tr.ablation_to_csv(rows, out)
    lines = out.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "pairs_per_language,min_val_loss"
    assert len(lines) == 3
    assert float(lines[1].split(",")[1]) == rows[0].min_val_loss
