"""Recognition adapter: a deterministic mock keyed by exact patch bytes, and
an external-engine binding that shells out to tesseract. The pipeline only
sees OcrResult values, so either engine can sit behind it.
"""

from __future__ import annotations

import hashlib
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, EngineError

# ISO-639-1 -> engine language pack codes; unmapped tags run without a hint.
ENGINE_LANGUAGE_CODES = {"en": "eng", "fr": "fra", "de": "deu", "ru": "rus", "it": "ita"}


@dataclass
class OcrResult:
    text: str
    confidence: float | None
    patch_index: int


@dataclass
class RecognizerSpec:
    engine: str = "external"  # external | mock
    language_hint: str | None = None
    engine_path: str = "tesseract"
    extra_args: tuple[str, ...] = ()
    lookup: dict[str, str] | None = None  # mock: patch_key -> text
    upscale_small: bool = False

    def __post_init__(self):
        if self.engine not in ("external", "mock"):
            raise ConfigError(f"engine must be external or mock, got {self.engine!r}")
        if self.engine == "mock" and self.lookup is None:
            raise ConfigError("mock engine requires an injected lookup table")
        self.extra_args = tuple(self.extra_args)


def patch_key(patch: np.ndarray) -> str:
    """Exact-content key: dtype, shape, and raw bytes all participate."""
    h = hashlib.sha256()
    h.update(str(patch.dtype).encode())
    h.update(str(patch.shape).encode())
    h.update(np.ascontiguousarray(patch).tobytes())
    return h.hexdigest()


def _normalize(text: str) -> str:
    return " ".join(text.split())


def _prepare_patch(patch: np.ndarray, spec: RecognizerSpec) -> np.ndarray:
    if spec.upscale_small and patch.shape[0] < 20:
        factor = max(2, 20 // max(patch.shape[0], 1) + 1)
        patch = np.repeat(np.repeat(patch, factor, axis=0), factor, axis=1)
        pad_width = [(4, 4), (4, 4)] + [(0, 0)] * (patch.ndim - 2)
        patch = np.pad(patch, pad_width, constant_values=255)
    return patch


def recognize(spec: RecognizerSpec, patch: np.ndarray, patch_index: int = 0) -> OcrResult:
    """One patch -> text, whitespace-normalized to a single line."""
    if patch.size == 0:
        raise ConfigError("patch is empty")
    if spec.engine == "mock":
        text = spec.lookup.get(patch_key(patch))
        if text is None:
            return OcrResult(text="", confidence=0.0, patch_index=patch_index)
        return OcrResult(text=_normalize(text), confidence=100.0, patch_index=patch_index)

    patch = _prepare_patch(patch, spec)
    cmd = [spec.engine_path]
    with tempfile.TemporaryDirectory(prefix="ocrpatch") as tmp:
        png = Path(tmp) / "patch.png"
        mode = "L" if patch.ndim == 2 else "RGB"
        Image.fromarray(patch.astype(np.uint8), mode=mode).save(png)
        cmd += [str(png), "stdout"]
        code = ENGINE_LANGUAGE_CODES.get(spec.language_hint or "")
        if code:
            cmd += ["-l", code]
        cmd += list(spec.extra_args)
        try:
            proc = subprocess.run(cmd, capture_output=True, timeout=60)
        except FileNotFoundError as exc:
            raise EngineError(f"recognition engine not found at {spec.engine_path!r}") from exc
        except subprocess.TimeoutExpired as exc:
            raise EngineError(f"recognition engine timed out on patch {patch_index}") from exc
    if proc.returncode != 0:
        raise EngineError(
            f"engine exited {proc.returncode}: {proc.stderr.decode('utf-8', 'replace').strip()}"
        )
    return OcrResult(text=_normalize(proc.stdout.decode("utf-8", "replace")), confidence=None,
                     patch_index=patch_index)


def recognize_regions(
    spec: RecognizerSpec, patches: list[np.ndarray], isolate_failures: bool = False
) -> list[OcrResult]:
    """Recognize in order; with isolate_failures an engine error on one patch
    degrades to empty text instead of aborting the rest."""
    results = []
    for i, patch in enumerate(patches):
        try:
            results.append(recognize(spec, patch, patch_index=i))
        except EngineError:
            if not isolate_failures:
                raise
            results.append(OcrResult(text="", confidence=0.0, patch_index=i))
    return results


def health_check(spec: RecognizerSpec) -> dict:
    """{"available": bool, "detail": str}; external engines are probed with
    their version flag."""
    if spec.engine == "mock":
        return {"available": True, "detail": f"mock lookup with {len(spec.lookup)} entries"}
    try:
        proc = subprocess.run([spec.engine_path, "--version"], capture_output=True, timeout=15)
    except FileNotFoundError:
        return {"available": False, "detail": f"engine not found at {spec.engine_path!r}"}
    except subprocess.TimeoutExpired:
        return {"available": False, "detail": "engine version probe timed out"}
    if proc.returncode != 0:
        return {"available": False, "detail": proc.stderr.decode("utf-8", "replace").strip()}
    first = (proc.stdout or proc.stderr).decode("utf-8", "replace").strip().splitlines()
    return {"available": True, "detail": first[0] if first else "version unknown"}
