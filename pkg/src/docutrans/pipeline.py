"""End-to-end orchestration: detect -> crop -> recognize -> translate.

A Pipeline holds loaded components (detector, translator, vocabularies,
recognizer spec); translate_image runs the four stages with per-stage
timings, and a failure raises a StageError naming the stage while keeping
every earlier stage's output.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .detector import UNet, binarize_mask, detector_from_checkpoint, predict_mask
from .errors import ConfigError, DataFormatError, StageError
from .metrics import MetricReport, evaluate_corpus
from .nmtdata import EOS, SOS, SUPPORTED_LANGUAGES, Vocabulary, decode_tokens, tokenize
from .ocr import OcrResult, RecognizerSpec, recognize
from .regions import BoundingBox, box_iou, components_to_boxes, crop_regions, extract_components
from .serialization import load_checkpoint
from .synthgen import DatasetManifest
from .transformer import Seq2SeqTransformer, greedy_decode, translator_from_checkpoint


@dataclass
class PipelineConfig:
    detector_checkpoint: str
    translator_checkpoint: str
    src_vocab: str
    tgt_vocab: str
    source_language: str = "en"
    target_language: str = "fr"
    recognizer: RecognizerSpec = field(default_factory=lambda: RecognizerSpec(engine="external"))
    binarize_threshold: float = 0.5
    min_area: int = 8
    crop_pad: int = 1
    max_decode_len: int = 64
    per_box: bool = False

    def __post_init__(self):
        for lang_attr in ("source_language", "target_language"):
            if getattr(self, lang_attr) not in SUPPORTED_LANGUAGES:
                raise ConfigError(f"{lang_attr} {getattr(self, lang_attr)!r} not in {SUPPORTED_LANGUAGES}")
        if isinstance(self.recognizer, dict):
            self.recognizer = RecognizerSpec(**self.recognizer)

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


@dataclass
class PipelineResult:
    boxes: list[BoundingBox]
    recognized: list[OcrResult]
    source_text: str
    translated_text: str
    timings: dict[str, float]  # stage -> milliseconds

    def to_json(self) -> str:
        return json.dumps(
            {
                "boxes": [b.to_dict() for b in self.boxes],
                "recognized": [asdict(r) for r in self.recognized],
                "source_text": self.source_text,
                "translated_text": self.translated_text,
                "timings": {k: round(v, 3) for k, v in self.timings.items()},
            },
            ensure_ascii=False,
        )


def translate_text(
    text: str,
    src_lang: str,
    tgt_lang: str,
    model: Seq2SeqTransformer,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    max_len: int = 64,
) -> str:
    """encode -> greedy decode -> detokenize; the no-image debugging path."""
    for lang in (src_lang, tgt_lang):
        if lang not in SUPPORTED_LANGUAGES:
            raise ConfigError(f"unsupported language {lang!r}")
    tokens = tokenize(text)
    if not tokens:
        return ""
    src_ids = (
        [SOS, src_vocab.tag_index(src_lang)]
        + [src_vocab.index(t) for t in tokens]
        + [src_vocab.tag_index(tgt_lang), EOS]
    )
    out = greedy_decode(model, src_ids, tgt_vocab.tag_index(tgt_lang), max_len=max_len)
    return decode_tokens(out, tgt_vocab)


class Pipeline:
    def __init__(
        self,
        detector: UNet,
        translator: Seq2SeqTransformer,
        src_vocab: Vocabulary,
        tgt_vocab: Vocabulary,
        recognizer: RecognizerSpec,
        source_language: str = "en",
        target_language: str = "fr",
        binarize_threshold: float = 0.5,
        min_area: int = 8,
        crop_pad: int = 1,
        max_decode_len: int = 64,
        per_box: bool = False,
    ):
        self.detector = detector
        self.translator = translator
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.recognizer = recognizer
        self.source_language = source_language
        self.target_language = target_language
        self.binarize_threshold = binarize_threshold
        self.min_area = min_area
        self.crop_pad = crop_pad
        self.max_decode_len = max_decode_len
        self.per_box = per_box

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "Pipeline":
        for name in ("detector_checkpoint", "translator_checkpoint", "src_vocab", "tgt_vocab"):
            if not Path(getattr(cfg, name)).is_file():
                raise ConfigError(f"{name} does not exist: {getattr(cfg, name)}")
        return cls(
            detector=detector_from_checkpoint(load_checkpoint(cfg.detector_checkpoint)),
            translator=translator_from_checkpoint(load_checkpoint(cfg.translator_checkpoint)),
            src_vocab=Vocabulary.load(cfg.src_vocab),
            tgt_vocab=Vocabulary.load(cfg.tgt_vocab),
            recognizer=cfg.recognizer,
            source_language=cfg.source_language,
            target_language=cfg.target_language,
            binarize_threshold=cfg.binarize_threshold,
            min_area=cfg.min_area,
            crop_pad=cfg.crop_pad,
            max_decode_len=cfg.max_decode_len,
            per_box=cfg.per_box,
        )

    def detect_boxes(self, image: np.ndarray) -> list[BoundingBox]:
        prob = predict_mask(self.detector, image)
        binary = binarize_mask(prob, self.binarize_threshold)
        return components_to_boxes(extract_components(binary, connectivity=8), min_area=self.min_area)

    def translate_image(self, image: np.ndarray) -> PipelineResult:
        partial: dict = {}
        timings: dict[str, float] = {}

        def run_stage(name: str, fn):
            start = time.perf_counter()
            try:
                value = fn()
            except Exception as exc:
                raise StageError(name, str(exc), dict(partial)) from exc
            timings[name] = (time.perf_counter() - start) * 1000.0
            partial[name] = value
            return value

        boxes = run_stage("detect", lambda: self.detect_boxes(image))
        patches = run_stage("crop", lambda: crop_regions(image, boxes, pad=self.crop_pad))

        def _recognize() -> list[OcrResult]:
            results = []
            for i, patch in enumerate(patches):
                try:
                    results.append(recognize(self.recognizer, patch, patch_index=i))
                except Exception:
                    # One unreadable crop must not sink the page.
                    results.append(OcrResult(text="", confidence=0.0, patch_index=i))
            return results

        recognized = run_stage("recognize", _recognize)
        source_text = " ".join(r.text for r in recognized if r.text)

        def _translate() -> str:
            if not source_text:
                return ""
            if self.per_box:
                outs = [
                    translate_text(r.text, self.source_language, self.target_language,
                                   self.translator, self.src_vocab, self.tgt_vocab, self.max_decode_len)
                    for r in recognized if r.text
                ]
                return " ".join(t for t in outs if t)
            return translate_text(source_text, self.source_language, self.target_language,
                                  self.translator, self.src_vocab, self.tgt_vocab, self.max_decode_len)

        translated = run_stage("translate", _translate)
        return PipelineResult(
            boxes=boxes, recognized=recognized, source_text=source_text,
            translated_text=translated, timings=timings,
        )


@dataclass
class EndToEndReport:
    detection_iou: float
    ocr_exact_match: float
    metrics: MetricReport
    images: int

    def to_json(self) -> str:
        data = json.loads(self.metrics.to_json())
        data["detection_iou"] = f"{self.detection_iou:.6f}"
        data["ocr_exact_match"] = f"{self.ocr_exact_match:.6f}"
        data["images"] = self.images
        return json.dumps(data)


def match_boxes(truth: list[BoundingBox], predicted: list[BoundingBox]) -> float:
    """Mean IoU over ground-truth boxes under greedy highest-IoU matching;
    unmatched truth boxes score 0."""
    if not truth:
        return 1.0 if not predicted else 0.0
    scored = sorted(
        ((box_iou(t, p), ti, pi) for ti, t in enumerate(truth) for pi, p in enumerate(predicted)),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    used_t: set[int] = set()
    used_p: set[int] = set()
    total = 0.0
    for iou, ti, pi in scored:
        if iou <= 0 or ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        total += iou
    return total / len(truth)


def evaluate_end_to_end(
    manifest: DatasetManifest, pipeline: Pipeline, references: list[str]
) -> EndToEndReport:
    """Detection IoU vs mask-derived truth boxes, recognition exact-match vs
    labels, and translation metrics vs the supplied references."""
    if len(references) != len(manifest):
        raise DataFormatError(
            f"got {len(references)} references for {len(manifest)} manifest samples"
        )
    ious = []
    exact = 0
    hypotheses = []
    for i in range(len(manifest)):
        image = np.asarray(Image.open(manifest.image_path(i)))
        mask = np.asarray(Image.open(manifest.mask_path(i)))
        label = manifest.label_path(i).read_text(encoding="utf-8").strip()
        truth_boxes = components_to_boxes(extract_components(mask, connectivity=8), min_area=1)
        result = pipeline.translate_image(image)
        ious.append(match_boxes(truth_boxes, result.boxes))
        if result.source_text == label:
            exact += 1
        hypotheses.append(result.translated_text)
    report = evaluate_corpus(hypotheses, references)
    return EndToEndReport(
        detection_iou=float(np.mean(ious)) if ious else 0.0,
        ocr_exact_match=exact / len(manifest),
        metrics=report,
        images=len(manifest),
    )
