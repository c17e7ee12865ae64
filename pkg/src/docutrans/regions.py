"""Binary mask -> word bounding boxes -> image crops.

Connected white regions are labeled with a run-based union-find pass, then
reduced to tight axis-aligned boxes sorted into reading order (rows grouped
by y-center, left to right within a row).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise DataFormatError(f"degenerate box {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}


@dataclass
class LabelMap:
    labels: np.ndarray  # 2-D int32, 0 = background, components 1..count
    count: int


def _validate_binary(mask: np.ndarray) -> None:
    if mask.ndim != 2:
        raise DataFormatError(f"mask must be 2-D, got shape {mask.shape}")
    values = np.unique(mask)
    if not set(values.tolist()) <= {0, 255}:
        raise DataFormatError(f"mask is not binary, values include {values[:8].tolist()}")


def extract_components(mask: np.ndarray, connectivity: int = 8) -> LabelMap:
    """Label connected foreground regions; ids are dense 1..K in scan order."""
    if connectivity not in (4, 8):
        raise DataFormatError(f"connectivity must be 4 or 8, got {connectivity}")
    _validate_binary(mask)
    fg = mask == 255
    height, width = fg.shape

    parent: list[int] = []

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(a: int, b: int) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    # Runs in consecutive rows are 8-adjacent when allowed to touch diagonally.
    tol = 1 if connectivity == 8 else 0
    all_runs: list[tuple[int, int, int, int]] = []  # (row, start, end, run_id)
    prev_runs: list[tuple[int, int, int]] = []
    for y in range(height):
        row = fg[y].astype(np.int8)
        edges = np.flatnonzero(np.diff(np.concatenate(([0], row, [0]))))
        curr_runs = []
        for k in range(0, len(edges), 2):
            start, end = int(edges[k]), int(edges[k + 1])
            run_id = len(parent)
            parent.append(run_id)
            curr_runs.append((start, end, run_id))
            all_runs.append((y, start, end, run_id))
            for p_start, p_end, p_id in prev_runs:
                if start < p_end + tol and end + tol > p_start:
                    union(run_id, p_id)
        prev_runs = curr_runs

    labels = np.zeros((height, width), dtype=np.int32)
    label_of_root: dict[int, int] = {}
    for y, start, end, run_id in all_runs:
        root = find(run_id)
        if root not in label_of_root:
            label_of_root[root] = len(label_of_root) + 1
        labels[y, start:end] = label_of_root[root]
    return LabelMap(labels, len(label_of_root))


def components_to_boxes(label_map: LabelMap, min_area: int = 8) -> list[BoundingBox]:
    """Tight box per component with pixel count >= min_area, in reading order."""
    labels = label_map.labels
    count = label_map.count
    if count == 0:
        return []
    ys, xs = np.nonzero(labels)
    ids = labels[ys, xs]
    areas = np.bincount(ids, minlength=count + 1)
    min_x = np.full(count + 1, labels.shape[1], dtype=np.int64)
    min_y = np.full(count + 1, labels.shape[0], dtype=np.int64)
    max_x = np.full(count + 1, -1, dtype=np.int64)
    max_y = np.full(count + 1, -1, dtype=np.int64)
    np.minimum.at(min_x, ids, xs)
    np.minimum.at(min_y, ids, ys)
    np.maximum.at(max_x, ids, xs)
    np.maximum.at(max_y, ids, ys)

    boxes = [
        BoundingBox(int(min_x[k]), int(min_y[k]), int(max_x[k] - min_x[k] + 1), int(max_y[k] - min_y[k] + 1))
        for k in range(1, count + 1)
        if areas[k] >= min_area
    ]
    return sort_reading_order(boxes)


def sort_reading_order(boxes: list[BoundingBox]) -> list[BoundingBox]:
    """Cluster boxes into rows by y-center (tolerance = median height / 2),
    order rows top to bottom and boxes left to right within each row."""
    if not boxes:
        return []
    tol = float(np.median([b.h for b in boxes])) / 2.0
    by_center = sorted(boxes, key=lambda b: (b.y + b.h / 2.0, b.x, b.y))
    rows: list[list[BoundingBox]] = []
    centers: list[float] = []
    for box in by_center:
        c = box.y + box.h / 2.0
        if rows and c - centers[-1] <= tol:
            rows[-1].append(box)
            centers[-1] = (centers[-1] * (len(rows[-1]) - 1) + c) / len(rows[-1])
        else:
            rows.append([box])
            centers.append(c)
    ordered = []
    for row in rows:
        ordered.extend(sorted(row, key=lambda b: (b.x, b.y)))
    return ordered


def crop_regions(image: np.ndarray, boxes: list[BoundingBox], pad: int = 0) -> list[np.ndarray]:
    """Sub-arrays for each box expanded by `pad` and clamped to image bounds."""
    if pad < 0:
        raise DataFormatError(f"pad must be non-negative, got {pad}")
    height, width = image.shape[:2]
    patches = []
    for b in boxes:
        x0 = max(0, b.x - pad)
        y0 = max(0, b.y - pad)
        x1 = min(width, b.x2 + pad)
        y1 = min(height, b.y2 + pad)
        patches.append(image[y0:y1, x0:x1].copy())
    return patches


def scale_boxes(
    boxes: list[BoundingBox], from_shape: tuple[int, int], to_shape: tuple[int, int]
) -> list[BoundingBox]:
    """Map boxes between mask space and original-image space."""
    if from_shape == to_shape:
        return list(boxes)
    sy = to_shape[0] / from_shape[0]
    sx = to_shape[1] / from_shape[1]
    scaled = []
    for b in boxes:
        x0 = int(round(b.x * sx))
        y0 = int(round(b.y * sy))
        x1 = min(to_shape[1], max(x0 + 1, int(round(b.x2 * sx))))
        y1 = min(to_shape[0], max(y0 + 1, int(round(b.y2 * sy))))
        scaled.append(BoundingBox(x0, y0, x1 - x0, y1 - y0))
    return scaled


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0, min(a.x2, b.x2) - max(a.x, b.x))
    iy = max(0, min(a.y2, b.y2) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def boxes_to_json(boxes: list[BoundingBox]) -> str:
    return json.dumps([b.to_dict() for b in boxes])


def boxes_from_json(text: str) -> list[BoundingBox]:
    return [BoundingBox(d["x"], d["y"], d["w"], d["h"]) for d in json.loads(text)]
