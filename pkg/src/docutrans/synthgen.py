"""Seeded generator of multilingual text images with word masks and labels.

Every sample is a pure function of (seed, index): a phrase is sampled from a
per-language wordlist, each word is rendered on its own layer, and the binary
mask marks exactly the pixels where ink was deposited. Glyph parts that land
disconnected (dots, accents, letter gaps) are joined with thin ink strokes so
one word is always one connected region, and words are placed with a gap wide
enough that distinct words never merge.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont
from scipy.ndimage import gaussian_filter, map_coordinates

from .errors import ConfigError, DataFormatError
from .regions import BoundingBox, extract_components

SUPPORTED_LANGUAGES = ("en", "fr", "de", "ru", "it")

# Index-aligned across languages: word k means the same thing everywhere,
# which also gives tests a deterministic word-for-word parallel corpus.
WORDLISTS: dict[str, list[str]] = {
    "en": ["house", "water", "stone", "light", "night", "river", "cloud", "bread",
           "green", "forest", "school", "summer", "heart", "world", "door", "dog",
           "cat", "book", "time", "town"],
    "fr": ["maison", "eau", "pierre", "jour", "nuit", "fleuve", "nuage", "pain",
           "vert", "bois", "école", "été", "cœur", "monde", "porte", "chien",
           "chat", "livre", "temps", "ville"],
    "de": ["haus", "wasser", "stein", "licht", "nacht", "fluss", "wolke", "brot",
           "grün", "wald", "schule", "sommer", "herz", "welt", "tür", "hund",
           "katze", "buch", "zeit", "stadt"],
    "ru": ["дом", "вода", "камень", "свет", "ночь", "река", "облако", "хлеб",
           "лес", "поле", "школа", "лето", "сердце", "мир", "дверь", "собака",
           "кошка", "книга", "время", "город"],
    "it": ["casa", "acqua", "pietra", "luce", "notte", "fiume", "nube", "pane",
           "verde", "bosco", "scuola", "estate", "cuore", "mondo", "porta", "cane",
           "gatto", "libro", "tempo", "paese"],
}

_FONT_CANDIDATES = (
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
)

_LAYOUT_RETRIES = 6
_INK_THRESHOLD = 128


def default_font_path() -> str:
    for cand in _FONT_CANDIDATES:
        if Path(cand).is_file():
            return cand
    hits = sorted(Path("/usr/share/fonts").rglob("DejaVuSans.ttf"))
    if hits:
        return str(hits[0])
    raise ConfigError("no DejaVuSans.ttf found; pass explicit font paths")


@dataclass
class SynthConfig:
    languages: list[str] = field(default_factory=lambda: list(SUPPORTED_LANGUAGES))
    wordlists: dict[str, list[str]] = field(default_factory=lambda: {k: list(v) for k, v in WORDLISTS.items()})
    fonts: dict[str, str] = field(default_factory=dict)
    font_size_range: tuple[int, int] = (16, 28)
    image_size: tuple[int, int] = (512, 512)  # (H, W)
    canvas_mode: str = "grayscale"
    background_mode: str = "flat"
    max_words: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_words < 1:
            raise ConfigError(f"max_words must be >= 1, got {self.max_words}")
        if self.font_size_range[0] > self.font_size_range[1] or self.font_size_range[0] < 6:
            raise ConfigError(f"bad font_size_range {self.font_size_range}")
        if self.canvas_mode not in ("grayscale", "rgb"):
            raise ConfigError(f"canvas_mode must be grayscale or rgb, got {self.canvas_mode!r}")
        if self.background_mode not in ("flat", "textured"):
            raise ConfigError(f"background_mode must be flat or textured, got {self.background_mode!r}")
        if not self.languages:
            raise ConfigError("languages must be non-empty")
        if not self.fonts:
            font = default_font_path()
            self.fonts = {lang: font for lang in self.languages}
        for lang in self.languages:
            if not self.wordlists.get(lang):
                raise ConfigError(f"language {lang!r} has no wordlist")
            if lang not in self.fonts:
                raise ConfigError(f"language {lang!r} has no font")


@dataclass
class AugmentConfig:
    hflip_prob: float = 0.5
    vflip_prob: float = 0.0
    rotation_max_deg: float = 10.0
    elastic_alpha: float = 8.0
    elastic_sigma: float = 6.0
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.rotation_max_deg <= 180.0:
            raise ConfigError(f"rotation_max_deg out of range: {self.rotation_max_deg}")
        for name in ("hflip_prob", "vflip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be a probability")
        if self.elastic_alpha < 0 or self.elastic_sigma <= 0:
            raise ConfigError("elastic_alpha must be >= 0 and elastic_sigma > 0")
        for name in ("jitter_brightness", "jitter_contrast"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")


@dataclass
class SyntheticSample:
    image: np.ndarray  # uint8, (H, W) grayscale or (H, W, 3)
    mask: np.ndarray   # uint8, (H, W), values {0, 255}
    text: str
    language: str
    word_boxes: list[BoundingBox]
    sample_id: int = 0


@dataclass
class DatasetManifest:
    records: list[dict]
    root: Path

    def __len__(self) -> int:
        return len(self.records)

    def image_path(self, i: int) -> Path:
        return self.root / self.records[i]["image"]

    def mask_path(self, i: int) -> Path:
        return self.root / self.records[i]["mask"]

    def label_path(self, i: int) -> Path:
        return self.root / self.records[i]["label"]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.records, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        records = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(records, list):
            raise DataFormatError(f"{path}: manifest must be a JSON array")
        for rec in records:
            missing = {"id", "image", "mask", "label", "language", "seed"} - set(rec)
            if missing:
                raise DataFormatError(f"{path}: record missing keys {sorted(missing)}")
        return cls(records=records, root=path.parent)


def sample_phrase(rng: random.Random, language: str, config: SynthConfig) -> str:
    if language not in config.languages:
        raise ConfigError(f"unknown language {language!r}")
    words = config.wordlists[language]
    n = rng.randint(1, config.max_words)
    return " ".join(rng.choice(words) for _ in range(n))


def _render_word_layer(word: str, font: ImageFont.FreeTypeFont) -> np.ndarray:
    """Tight ink-alpha layer for one word, joined into a single component."""
    x0, y0, x1, y1 = font.getbbox(word)
    w, h = max(1, x1 - x0), max(1, y1 - y0)
    layer = Image.new("L", (w + 2, h + 2), 0)
    draw = ImageDraw.Draw(layer)
    draw.text((1 - x0, 1 - y0), word, fill=255, font=font)
    arr = np.asarray(layer)

    # Bridge detached glyph parts (i-dots, accents, letter gaps) with thin
    # strokes so the word forms exactly one 8-connected region.
    for _ in range(64):
        binary = np.where(arr >= _INK_THRESHOLD, 255, 0).astype(np.uint8)
        label_map = extract_components(binary, connectivity=8)
        if label_map.count <= 1:
            break
        ys, xs = np.nonzero(label_map.labels == 1)
        oys, oxs = np.nonzero((label_map.labels > 1))
        d2 = (ys[:, None] - oys[None, :]) ** 2 + (xs[:, None] - oxs[None, :]) ** 2
        ai, bi = np.unravel_index(int(np.argmin(d2)), d2.shape)
        draw.line(
            [(int(xs[ai]), int(ys[ai])), (int(oxs[bi]), int(oys[bi]))],
            fill=255,
            width=2,
        )
        arr = np.asarray(layer)
    else:
        raise DataFormatError(f"could not connect ink for word {word!r}")

    ys, xs = np.nonzero(arr >= _INK_THRESHOLD)
    if ys.size == 0:
        raise DataFormatError(f"word {word!r} rendered no ink")
    return arr[ys.min():ys.max() + 1, xs.min():xs.max() + 1].copy()


def _try_layout(
    layers: list[np.ndarray], canvas: tuple[int, int], gap_x: int, line_gap: int, margin: int
) -> list[tuple[int, int]] | None:
    """Left-to-right, wrapping placement; None when the canvas is too small."""
    height, width = canvas
    positions = []
    x, y = margin, margin
    row_h = 0
    for layer in layers:
        lh, lw = layer.shape
        if lw > width - 2 * margin:
            return None
        if x + lw > width - margin:
            x = margin
            y += row_h + line_gap
            row_h = 0
        if y + lh > height - margin:
            return None
        positions.append((x, y))
        x += lw + gap_x
        row_h = max(row_h, lh)
    return positions


def render_sample(phrase: str, language: str, config: SynthConfig, rng: random.Random) -> SyntheticSample:
    if not phrase.strip():
        raise DataFormatError("phrase must be non-empty")
    if language not in config.fonts:
        raise ConfigError(f"no font for language {language!r}")
    words = phrase.split()
    height, width = config.image_size
    font_path = config.fonts[language]

    size = rng.randint(*config.font_size_range)
    positions = None
    layers: list[np.ndarray] = []
    for _ in range(_LAYOUT_RETRIES):
        try:
            font = ImageFont.truetype(font_path, size)
        except OSError as exc:
            raise ConfigError(f"cannot load font {font_path}: {exc}") from exc
        layers = [_render_word_layer(w, font) for w in words]
        space_w = max(3, int(font.getlength(" ")))
        positions = _try_layout(layers, (height, width), gap_x=space_w, line_gap=max(3, size // 3), margin=max(4, size // 2))
        if positions is not None:
            break
        size = max(8, size - 3)
    if positions is None:
        raise DataFormatError(f"phrase {phrase!r} does not fit a {height}x{width} canvas")

    background = rng.randint(200, 245)
    canvas = np.full((height, width), background, dtype=np.float64)
    if config.background_mode == "textured":
        np_rng = np.random.default_rng(rng.randrange(2**63))
        canvas += np_rng.normal(0.0, rng.uniform(2.0, 6.0), size=canvas.shape)
        canvas = np.clip(canvas, 0, 255)

    ink = rng.randint(0, 60)
    mask = np.zeros((height, width), dtype=np.uint8)
    boxes = []
    for layer, (x, y) in zip(layers, positions):
        lh, lw = layer.shape
        alpha = layer.astype(np.float64) / 255.0
        region = canvas[y:y + lh, x:x + lw]
        canvas[y:y + lh, x:x + lw] = region * (1.0 - alpha) + ink * alpha
        word_mask = layer >= _INK_THRESHOLD
        mask[y:y + lh, x:x + lw][word_mask] = 255
        ys, xs = np.nonzero(word_mask)
        boxes.append(
            BoundingBox(x + int(xs.min()), y + int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))
        )

    image = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    if config.canvas_mode == "rgb":
        image = np.repeat(image[:, :, None], 3, axis=2)
    return SyntheticSample(image=image, mask=mask, text=" ".join(words), language=language, word_boxes=boxes)


def generate_sample(config: SynthConfig, index: int) -> SyntheticSample:
    """Sample `index` of the dataset; pure function of (config.seed, index)."""
    rng = random.Random(_sample_seed(config.seed, index))
    language = rng.choice(list(config.languages))
    phrase = sample_phrase(rng, language, config)
    sample = render_sample(phrase, language, config, rng)
    sample.sample_id = index
    return sample


def _sample_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % (2**63)


def generate_dataset(config: SynthConfig, n: int, out_dir: str | Path) -> DatasetManifest:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        sample = generate_sample(config, i)
        stem = f"synthetic_text_{i}_{sample.language}"
        img_mode = "RGB" if sample.image.ndim == 3 else "L"
        Image.fromarray(sample.image, mode=img_mode).save(out / f"{stem}.png")
        Image.fromarray(sample.mask, mode="L").save(out / f"{stem}_mask.png")
        (out / f"{stem}.txt").write_text(sample.text + "\n", encoding="utf-8")
        records.append(
            {
                "id": i,
                "image": f"{stem}.png",
                "mask": f"{stem}_mask.png",
                "label": f"{stem}.txt",
                "language": sample.language,
                "seed": _sample_seed(config.seed, i),
            }
        )
    manifest = DatasetManifest(records=records, root=out)
    manifest.save(out / "manifest.json")
    return manifest


def _geometric_maps(shape: tuple[int, int], angle_deg: float, alpha: float, sigma: float,
                    np_rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inverse sampling grid (input row/col to read for each output pixel)."""
    height, width = shape
    rr, cc = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    r_in, c_in = rr, cc

    if alpha > 0:
        dr = gaussian_filter(np_rng.uniform(-1.0, 1.0, size=shape), sigma)
        dc = gaussian_filter(np_rng.uniform(-1.0, 1.0, size=shape), sigma)
        dr *= alpha / max(np.abs(dr).max(), 1e-12)
        dc *= alpha / max(np.abs(dc).max(), 1e-12)
        r_in = rr + dr
        c_in = cc + dc

    if angle_deg != 0.0:
        theta = np.deg2rad(angle_deg)
        cr, cw = (height - 1) / 2.0, (width - 1) / 2.0
        rd, cd = r_in - cr, c_in - cw
        r_in = cr + np.cos(theta) * rd - np.sin(theta) * cd
        c_in = cw + np.sin(theta) * rd + np.cos(theta) * cd
    return r_in, c_in


def _warp_box(box: BoundingBox, coords: np.ndarray, shape: tuple[int, int]) -> BoundingBox:
    """Push a box through the same inverse map as the mask: rasterize it,
    warp with nearest sampling, and take the warped extent. Anything inside
    the box lands inside the result by construction."""
    rect = np.zeros(shape, dtype=np.uint8)
    rect[box.y:box.y2, box.x:box.x2] = 255
    warped = map_coordinates(rect, coords, order=0, mode="constant", cval=0)
    ys, xs = np.nonzero(warped)
    if ys.size == 0:
        x0 = int(np.clip(box.x, 0, shape[1] - 1))
        y0 = int(np.clip(box.y, 0, shape[0] - 1))
        return BoundingBox(x0, y0, 1, 1)
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1))


def _map_image(image: np.ndarray, r_in: np.ndarray, c_in: np.ndarray, fill: float) -> np.ndarray:
    coords = np.stack([r_in, c_in])
    if image.ndim == 2:
        out = map_coordinates(image.astype(np.float64), coords, order=1, mode="constant", cval=fill)
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    chans = [
        map_coordinates(image[:, :, k].astype(np.float64), coords, order=1, mode="constant", cval=fill)
        for k in range(image.shape[2])
    ]
    return np.clip(np.rint(np.stack(chans, axis=2)), 0, 255).astype(np.uint8)


def augment_sample(sample: SyntheticSample, rng: random.Random, aug: AugmentConfig) -> SyntheticSample:
    """Geometric transforms hit image, mask, and boxes alike; color jitter
    touches the image only. Box order stays aligned with the words in text."""
    image = sample.image.copy()
    mask = sample.mask.copy()
    boxes = list(sample.word_boxes)
    height, width = mask.shape

    if rng.random() < aug.hflip_prob:
        image = image[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
        boxes = [BoundingBox(width - b.x - b.w, b.y, b.w, b.h) for b in boxes]
    if rng.random() < aug.vflip_prob:
        image = image[::-1].copy()
        mask = mask[::-1].copy()
        boxes = [BoundingBox(b.x, height - b.y - b.h, b.w, b.h) for b in boxes]

    angle = rng.uniform(-aug.rotation_max_deg, aug.rotation_max_deg) if aug.rotation_max_deg > 0 else 0.0
    if angle != 0.0 or aug.elastic_alpha > 0:
        np_rng = np.random.default_rng(rng.randrange(2**63))
        r_in, c_in = _geometric_maps((height, width), angle, aug.elastic_alpha, aug.elastic_sigma, np_rng)
        coords = np.stack([r_in, c_in])
        fill = float(np.median(np.concatenate([image[0].ravel(), image[-1].ravel()])))
        image = _map_image(image, r_in, c_in, fill)
        warped = map_coordinates(mask, coords, order=0, mode="constant", cval=0)
        mask = np.where(warped >= _INK_THRESHOLD, 255, 0).astype(np.uint8)
        boxes = [_warp_box(b, coords, (height, width)) for b in boxes]

    if aug.jitter_brightness > 0 or aug.jitter_contrast > 0:
        contrast = 1.0 + rng.uniform(-aug.jitter_contrast, aug.jitter_contrast)
        brightness = rng.uniform(-aug.jitter_brightness, aug.jitter_brightness) * 255.0
        pivot = float(image.mean())
        image = np.clip(np.rint((image.astype(np.float64) - pivot) * contrast + pivot + brightness), 0, 255).astype(np.uint8)

    return SyntheticSample(
        image=image, mask=mask, text=sample.text, language=sample.language,
        word_boxes=boxes, sample_id=sample.sample_id,
    )
