"""Command-line entry points for the document translation pipeline."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import detector as det
from . import transformer as tfm
from .errors import ConfigError, DataFormatError, EngineError, StageError, TrainingDivergedError
from .metrics import evaluate_corpus
from .nmtdata import Vocabulary, build_vocabularies, encode_pair, load_parallel_corpus
from .ocr import RecognizerSpec, health_check
from .pipeline import Pipeline, PipelineConfig, evaluate_end_to_end, translate_text
from .regions import boxes_to_json
from .serialization import load_checkpoint
from .synthgen import AugmentConfig, DatasetManifest, SynthConfig, generate_dataset

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_ENGINE = 4
EXIT_TRAINING = 5


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="output file or directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="docutrans", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a labeled synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--size", type=str, default="512x512", help="HxW canvas size")
    p.add_argument("--languages", type=str, default="en,fr,de,ru,it")
    p.add_argument("--max-words", type=int, default=5)
    p.add_argument("--background", choices=["flat", "textured"], default="flat")

    p = sub.add_parser("train-detector", help="train the U-Net word detector")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True, help="dataset manifest.json")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--input-size", type=str, default="512x512")
    p.add_argument("--augment", action="store_true")

    p = sub.add_parser("train-translator", help="train the seq2seq translator")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True, help="parallel corpus CSV")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--d-model", type=int, default=512)
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--ff-size", type=int, default=2048)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--max-seq-len", type=int, default=5000)
    p.add_argument("--min-freq", type=int, default=2)

    p = sub.add_parser("ablate", help="data-volume ablation over a corpus")
    _add_common(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--sizes", type=str, default="100,1000,5000")
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--holdout", type=int, default=50)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-size", type=int, default=256)

    p = sub.add_parser("detect", help="predict word boxes for one image")
    _add_common(p)
    p.add_argument("image", type=Path)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--min-area", type=int, default=8)
    p.add_argument("--save-mask", type=Path, default=None)

    p = sub.add_parser("translate-text", help="translate a sentence directly")
    _add_common(p)
    p.add_argument("--text", type=str, required=True)
    p.add_argument("--src-lang", type=str, required=True)
    p.add_argument("--tgt-lang", type=str, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--src-vocab", type=Path, required=True)
    p.add_argument("--tgt-vocab", type=Path, required=True)
    p.add_argument("--max-len", type=int, default=64)

    p = sub.add_parser("translate-image", help="run the full pipeline on an image")
    _add_common(p)
    p.add_argument("image", type=Path)
    p.add_argument("--boxes-only", action="store_true", help="emit regions JSON and stop")

    p = sub.add_parser("evaluate", help="end-to-end evaluation over a dataset")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--references", type=Path, default=None,
                   help="one reference per line; defaults to the dataset labels")

    p = sub.add_parser("ocr-health", help="check recognition engine availability")
    _add_common(p)
    p.add_argument("--engine-path", type=str, default="tesseract")

    p = sub.add_parser("score", help="compute translation metrics for two text files")
    _add_common(p)
    p.add_argument("--hypotheses", type=Path, required=True)
    p.add_argument("--references", type=Path, required=True)
    return parser


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
        return h, w
    except ValueError as exc:
        raise ConfigError(f"bad size {text!r}, expected HxW") from exc


def _cmd_gen_data(args) -> int:
    h, w = _parse_size(args.size)
    config = SynthConfig(
        languages=[s.strip() for s in args.languages.split(",") if s.strip()],
        image_size=(h, w),
        background_mode=args.background,
        max_words=args.max_words,
        seed=args.seed,
    )
    out = args.out or Path("synth-data")
    manifest = generate_dataset(config, args.n, out)
    print(json.dumps({"manifest": str(out / "manifest.json"), "samples": len(manifest)}))
    return 0


def _cmd_train_detector(args) -> int:
    h, w = _parse_size(args.input_size)
    manifest = DatasetManifest.load(args.data)
    unet_cfg = det.UNetConfig(input_size=(h, w, 3), encoder_depth=args.depth,
                              base_channels=args.base_channels)
    train_cfg = det.DetectorTrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size,
        validation_fraction=args.val_fraction, epochs=args.epochs, seed=args.seed,
    )
    augment = AugmentConfig() if args.augment else None
    checkpoint, history = det.train_detector(manifest, train_cfg, unet_cfg, augment=augment)
    out = args.out or Path("detector.ckpt")
    det.save_detector(out, checkpoint)
    history.to_csv(Path(out).with_suffix(".losses.csv"))
    print(json.dumps({"checkpoint": str(out), "best_epoch": checkpoint.meta["epoch"],
                      "best_val_loss": checkpoint.meta["val_loss"]}))
    return 0


def _cmd_train_translator(args) -> int:
    corpus = load_parallel_corpus(args.corpus, max_len=args.max_seq_len)
    src_vocab, tgt_vocab = build_vocabularies(corpus.pairs, min_freq=args.min_freq)
    encoded = [encode_pair(p, src_vocab, tgt_vocab) for p in corpus.pairs]
    model_cfg = tfm.TransformerConfig(
        d_model=args.d_model, num_encoder_layers=args.layers, num_decoder_layers=args.layers,
        num_heads=args.heads, head_size=args.d_model // args.heads, ff_size=args.ff_size,
        dropout=args.dropout, max_seq_len=args.max_seq_len,
    )
    train_cfg = tfm.NmtTrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        validation_fraction=args.val_fraction, seed=args.seed,
    )
    checkpoint, history = tfm.train_translator(encoded, train_cfg, model_cfg, src_vocab, tgt_vocab)
    out = args.out or Path("translator.ckpt")
    tfm.save_translator(out, checkpoint)
    history.to_csv(Path(out).with_suffix(".losses.csv"))
    src_vocab.save(Path(out).with_suffix(".src.vocab"))
    tgt_vocab.save(Path(out).with_suffix(".tgt.vocab"))
    print(json.dumps({"checkpoint": str(out), "loaded": corpus.rejects["loaded"],
                      "rejected": corpus.rejects["total_rows"] - corpus.rejects["loaded"],
                      "best_val_loss": checkpoint.meta["val_loss"]}))
    return 0


def _cmd_ablate(args) -> int:
    corpus = load_parallel_corpus(args.corpus)
    sizes = [int(s) for s in args.sizes.split(",")]
    model_cfg = tfm.TransformerConfig(
        d_model=args.d_model, num_encoder_layers=args.layers, num_decoder_layers=args.layers,
        num_heads=args.heads, head_size=args.d_model // args.heads, ff_size=args.ff_size,
        dropout=0.1, max_seq_len=512,
    )
    train_cfg = tfm.NmtTrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                                   epochs=args.epochs, seed=args.seed)
    rows = tfm.run_data_ablation(corpus.pairs, sizes, model_cfg, train_cfg,
                                 holdout_per_language=args.holdout)
    out = args.out or Path("ablation.csv")
    tfm.ablation_to_csv(rows, out)
    print(json.dumps(
        [{"pairs_per_language": r.pairs_per_language, "min_val_loss": r.min_val_loss} for r in rows]
    ))
    return 0


def _cmd_detect(args) -> int:
    model = det.detector_from_checkpoint(load_checkpoint(args.checkpoint))
    image = np.asarray(Image.open(args.image))
    prob = det.predict_mask(model, image)
    binary = det.binarize_mask(prob, args.threshold)
    from .regions import components_to_boxes, extract_components

    boxes = components_to_boxes(extract_components(binary, connectivity=8), min_area=args.min_area)
    if args.save_mask:
        Image.fromarray(binary, mode="L").save(args.save_mask)
    payload = boxes_to_json(boxes)
    if args.out:
        args.out.write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def _cmd_translate_text(args) -> int:
    model = tfm.translator_from_checkpoint(load_checkpoint(args.checkpoint))
    src_vocab = Vocabulary.load(args.src_vocab)
    tgt_vocab = Vocabulary.load(args.tgt_vocab)
    print(translate_text(args.text, args.src_lang, args.tgt_lang, model,
                         src_vocab, tgt_vocab, max_len=args.max_len))
    return 0


def _cmd_translate_image(args) -> int:
    if args.config is None:
        raise ConfigError("translate-image requires --config with a pipeline JSON file")
    pipeline = Pipeline.from_config(PipelineConfig.from_json(args.config))
    image = np.asarray(Image.open(args.image))
    if args.boxes_only:
        print(boxes_to_json(pipeline.detect_boxes(image)))
        return 0
    result = pipeline.translate_image(image)
    payload = result.to_json()
    if args.out:
        args.out.write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def _cmd_evaluate(args) -> int:
    if args.config is None:
        raise ConfigError("evaluate requires --config with a pipeline JSON file")
    pipeline = Pipeline.from_config(PipelineConfig.from_json(args.config))
    manifest = DatasetManifest.load(args.manifest)
    if args.references:
        references = args.references.read_text(encoding="utf-8").splitlines()
    else:
        references = [manifest.label_path(i).read_text(encoding="utf-8").strip()
                      for i in range(len(manifest))]
    report = evaluate_end_to_end(manifest, pipeline, references)
    payload = report.to_json()
    if args.out:
        args.out.write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


def _cmd_ocr_health(args) -> int:
    status = health_check(RecognizerSpec(engine="external", engine_path=args.engine_path))
    print(json.dumps(status))
    return 0 if status["available"] else EXIT_ENGINE


def _cmd_score(args) -> int:
    hyps = args.hypotheses.read_text(encoding="utf-8").splitlines()
    refs = args.references.read_text(encoding="utf-8").splitlines()
    report = evaluate_corpus(hyps, refs)
    payload = report.to_json()
    if args.out:
        args.out.write_text(payload + "\n", encoding="utf-8")
    print(payload)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-detector": _cmd_train_detector,
    "train-translator": _cmd_train_translator,
    "ablate": _cmd_ablate,
    "detect": _cmd_detect,
    "translate-text": _cmd_translate_text,
    "translate-image": _cmd_translate_image,
    "evaluate": _cmd_evaluate,
    "ocr-health": _cmd_ocr_health,
    "score": _cmd_score,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        missing = exc.filename if exc.filename is not None else str(exc)
        print(f"data error: no such file: {missing}", file=sys.stderr)
        return EXIT_DATA
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except TrainingDivergedError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except StageError as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
