"""Attention-map coverage analysis.

A producer (the extractor package, or any compatible tool) dumps, for one
image/question pair, the attention from the first generated answer token to
the multimodal sequence, for the real question and for a generic probe
question. This module validates those bundles, maps answer-token attention
through the connector onto the vision grid, forms the ratio map
question / (probe + epsilon), and measures how much of that relative
attention mass falls inside a target region's grid cells.

Bundle directory layout:
    metadata.json   field descriptions below
    a_st_q.bin      answer-token attention, real question, (L, H, 1, T)
    a_st_qprime.bin same for the probe question, (L, H, 1, T)
    a_ti.bin        connector attention (L_c, H_c, T, N^2); omitted when
                    metadata marks the connector as "identity" (then T = N^2)

Binary tensors are float32, little-endian, row-major (C order).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from PIL import Image

from . import jsonl
from .errors import BundleError

log = logging.getLogger(__name__)

# The probe question: a generic description request whose attention pattern
# serves as the per-token normalizer for the real question's pattern.
PROBE_QUESTION = "Write a general description of the image."

DEFAULT_EPSILON = 1e-6

ROW_SUM_TOL = 1e-3

_REQUIRED_FIELDS = (
    "model_id",
    "item_id",
    "grid_n",
    "t_tokens",
    "llm_layers",
    "llm_heads",
    "connector_layers",
    "connector_heads",
    "a_st_q",
    "a_st_qprime",
    "a_ti",
    "dtype",
    "byte_order",
)


@dataclass
class AttentionBundle:
    model_id: str
    item_id: str
    grid_n: int
    t_tokens: int
    llm_layers: int
    llm_heads: int
    connector_layers: int
    connector_heads: int
    a_st_q: np.ndarray  # (L, H, 1, T)
    a_st_qprime: np.ndarray  # (L, H, 1, T)
    a_ti: np.ndarray | None  # (L_c, H_c, T, N^2); None means identity

    @property
    def identity_connector(self) -> bool:
        return self.a_ti is None


def _read_tensor(path: Path, shape: tuple[int, ...], name: str) -> np.ndarray:
    expected = int(np.prod(shape))
    data = np.fromfile(path, dtype="<f4")
    if data.size != expected:
        raise BundleError(
            f"tensor {name} in {path.parent} has {data.size} values, expected {expected} for shape {shape}"
        )
    return data.reshape(shape)


def _check_rows(tensor: np.ndarray, name: str, row_axes: int) -> None:
    """Validate non-negativity, finiteness, and softmax row sums.

    row_axes is the number of leading axes that index rows; the final axis
    is the softmax support.
    """
    if not np.isfinite(tensor).all():
        bad = np.argwhere(~np.isfinite(tensor))[0]
        raise BundleError(f"tensor {name} has a non-finite value at index {tuple(int(v) for v in bad)}")
    if (tensor < 0).any():
        bad = np.argwhere(tensor < 0)[0]
        raise BundleError(f"tensor {name} has a negative value at index {tuple(int(v) for v in bad)}")
    sums = tensor.sum(axis=-1)
    off = np.abs(sums - 1.0) > ROW_SUM_TOL
    if off.any():
        bad = np.argwhere(off)[0]
        index = tuple(int(v) for v in bad[:row_axes]) if bad.size else ()
        raise BundleError(
            f"tensor {name} row {index} sums to {float(sums[tuple(bad)]):.6f}, expected 1 within {ROW_SUM_TOL}"
        )


def load_bundle(bundle_dir: str | Path) -> AttentionBundle:
    """Read and validate one attention bundle directory."""
    bundle_dir = Path(bundle_dir)
    meta_path = bundle_dir / "metadata.json"
    if not meta_path.exists():
        raise BundleError(f"no metadata.json in {bundle_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    missing = [f for f in _REQUIRED_FIELDS if f not in meta]
    if missing:
        raise BundleError(f"metadata in {bundle_dir} is missing fields: {missing}")
    if meta["dtype"] != "float32" or meta["byte_order"] != "little":
        raise BundleError(
            f"bundle {bundle_dir} must be little-endian float32, got "
            f"{meta['dtype']}/{meta['byte_order']}"
        )

    grid_n = int(meta["grid_n"])
    t_tokens = int(meta["t_tokens"])
    layers = int(meta["llm_layers"])
    heads = int(meta["llm_heads"])
    c_layers = int(meta["connector_layers"])
    c_heads = int(meta["connector_heads"])

    st_shape = (layers, heads, 1, t_tokens)
    a_st_q = _read_tensor(bundle_dir / meta["a_st_q"], st_shape, "a_st_q")
    a_st_qprime = _read_tensor(bundle_dir / meta["a_st_qprime"], st_shape, "a_st_qprime")
    _check_rows(a_st_q, "a_st_q", row_axes=3)
    _check_rows(a_st_qprime, "a_st_qprime", row_axes=3)

    a_ti: np.ndarray | None = None
    if meta["a_ti"] == "identity":
        if t_tokens != grid_n * grid_n:
            raise BundleError(
                f"identity connector requires t_tokens == grid_n^2, got T={t_tokens}, N={grid_n}"
            )
    else:
        ti_shape = (c_layers, c_heads, t_tokens, grid_n * grid_n)
        a_ti = _read_tensor(bundle_dir / meta["a_ti"], ti_shape, "a_ti")
        _check_rows(a_ti, "a_ti", row_axes=3)

    return AttentionBundle(
        model_id=str(meta["model_id"]),
        item_id=str(meta["item_id"]),
        grid_n=grid_n,
        t_tokens=t_tokens,
        llm_layers=layers,
        llm_heads=heads,
        connector_layers=c_layers,
        connector_heads=c_heads,
        a_st_q=a_st_q,
        a_st_qprime=a_st_qprime,
        a_ti=a_ti,
    )


def write_bundle(
    bundle_dir: str | Path,
    model_id: str,
    item_id: str,
    grid_n: int,
    a_st_q: np.ndarray,
    a_st_qprime: np.ndarray,
    a_ti: np.ndarray | None = None,
) -> Path:
    """Serialize tensors into the bundle directory format."""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    layers, heads, _, t_tokens = a_st_q.shape
    meta: dict[str, Any] = {
        "model_id": model_id,
        "item_id": item_id,
        "grid_n": int(grid_n),
        "t_tokens": int(t_tokens),
        "llm_layers": int(layers),
        "llm_heads": int(heads),
        "connector_layers": int(a_ti.shape[0]) if a_ti is not None else 1,
        "connector_heads": int(a_ti.shape[1]) if a_ti is not None else 1,
        "a_st_q": "a_st_q.bin",
        "a_st_qprime": "a_st_qprime.bin",
        "a_ti": "a_ti.bin" if a_ti is not None else "identity",
        "dtype": "float32",
        "byte_order": "little",
    }
    np.ascontiguousarray(a_st_q, dtype="<f4").tofile(bundle_dir / "a_st_q.bin")
    np.ascontiguousarray(a_st_qprime, dtype="<f4").tofile(bundle_dir / "a_st_qprime.bin")
    if a_ti is not None:
        np.ascontiguousarray(a_ti, dtype="<f4").tofile(bundle_dir / "a_ti.bin")
    (bundle_dir / "metadata.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return bundle_dir


def head_average(tensor: np.ndarray) -> np.ndarray:
    """Mean over the head axis (axis 1) of a stacked attention tensor."""
    return tensor.mean(axis=1)


def identity_connector(t_tokens: int) -> np.ndarray:
    """Explicit (1, T, T) identity used to cross-check the identity path."""
    return np.eye(t_tokens, dtype=np.float64)[None, :, :]


def compose_answer_to_image(a_st_hat: np.ndarray, a_ti_hat: np.ndarray) -> np.ndarray:
    """Chain answer-to-token attention through the connector onto the grid.

    a_st_hat: (L, 1, T) head-averaged answer-token attention.
    a_ti_hat: (L_c, T, N^2) head-averaged connector attention.
    Returns (L, L_c, 1, N^2): for every LLM layer m and connector layer k,
    the matrix product a_st_hat[m] @ a_ti_hat[k].
    """
    return np.einsum("lot,ktn->lkon", a_st_hat, a_ti_hat)


def answer_to_image_maps(bundle: AttentionBundle, which: str = "q") -> np.ndarray:
    """(L, L_c, 1, N^2) answer-to-grid attention for one question variant."""
    tensor = bundle.a_st_q if which == "q" else bundle.a_st_qprime
    a_st_hat = head_average(tensor)
    if bundle.identity_connector:
        return a_st_hat[:, None, :, :]
    return compose_answer_to_image(a_st_hat, head_average(bundle.a_ti))


def relative_attention(
    question_map: np.ndarray, probe_map: np.ndarray, epsilon: float = DEFAULT_EPSILON
) -> np.ndarray:
    """Elementwise ratio question / (probe + epsilon)."""
    return question_map / (probe_map + epsilon)


def select_layer(
    a_rel: np.ndarray,
    grid_n: int,
    answer_layer: int,
    connector_layer: int | None = None,
) -> np.ndarray:
    """Slice one (answer layer, connector layer) map and shape it N x N.

    Layer indices are 1-based. connector_layer=None picks the last
    connector layer.
    """
    layers, c_layers = a_rel.shape[0], a_rel.shape[1]
    if not 1 <= answer_layer <= layers:
        raise BundleError(f"answer_layer {answer_layer} out of range 1..{layers}")
    if connector_layer is None:
        connector_layer = c_layers
    if not 1 <= connector_layer <= c_layers:
        raise BundleError(f"connector_layer {connector_layer} out of range 1..{c_layers}")
    return a_rel[answer_layer - 1, connector_layer - 1, 0, :].reshape(grid_n, grid_n)


def relative_grid(
    bundle: AttentionBundle,
    answer_layer: int,
    connector_layer: int | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Full path from bundle to the N x N relative-attention map."""
    a_rel = relative_attention(
        answer_to_image_maps(bundle, "q"),
        answer_to_image_maps(bundle, "qprime"),
        epsilon,
    )
    return select_layer(a_rel, bundle.grid_n, answer_layer, connector_layer)


def bbox_to_grid(
    bbox: Sequence[float], width: int, height: int, grid_n: int
) -> list[tuple[int, int]]:
    """Grid cells whose centers fall inside the half-open pixel box."""
    x1, y1, x2, y2 = bbox
    cells: list[tuple[int, int]] = []
    for row in range(grid_n):
        cy = (row + 0.5) * height / grid_n
        if not (y1 <= cy < y2):
            continue
        for col in range(grid_n):
            cx = (col + 0.5) * width / grid_n
            if x1 <= cx < x2:
                cells.append((row, col))
    return cells


def coverage(grid_map: np.ndarray, cells: Iterable[tuple[int, int]]) -> float:
    """Fraction of total map mass lying inside the given cells."""
    total = float(grid_map.sum())
    if total <= 0.0:
        raise BundleError("attention map has zero total mass; coverage is undefined")
    inside = sum(float(grid_map[row, col]) for row, col in cells)
    return inside / total


@dataclass
class CoverageRecord:
    item_id: str
    model_id: str
    bbox: list[int]
    coverage: float
    answer_layer: int
    connector_layer: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "model_id": self.model_id,
            "bbox": list(self.bbox),
            "coverage": self.coverage,
            "answer_layer": self.answer_layer,
            "connector_layer": self.connector_layer,
        }


def coverage_for_bundle(
    bundle: AttentionBundle,
    bbox: Sequence[int],
    image_size: tuple[int, int],
    answer_layer: int,
    connector_layer: int | None = None,
    epsilon: float = DEFAULT_EPSILON,
) -> CoverageRecord:
    grid = relative_grid(bundle, answer_layer, connector_layer, epsilon)
    cells = bbox_to_grid(bbox, image_size[0], image_size[1], bundle.grid_n)
    value = coverage(grid, cells)
    resolved_connector = connector_layer if connector_layer is not None else (
        1 if bundle.identity_connector else bundle.connector_layers
    )
    return CoverageRecord(
        item_id=bundle.item_id,
        model_id=bundle.model_id,
        bbox=[int(v) for v in bbox],
        coverage=value,
        answer_layer=answer_layer,
        connector_layer=resolved_connector,
    )


def write_coverage_report(records: list[CoverageRecord], out_path: str | Path) -> str:
    """Persist per-item records as JSONL and return a per-model mean table."""
    out_path = Path(out_path)
    ordered = sorted(records, key=lambda r: (r.model_id, r.item_id))
    jsonl.write_records_atomic(out_path, (r.to_dict() for r in ordered))
    return format_coverage_table(records)


def format_coverage_table(records: list[CoverageRecord]) -> str:
    """Aligned text table: one column per model, mean coverage in percent."""
    by_model: dict[str, list[float]] = {}
    for record in records:
        by_model.setdefault(record.model_id, []).append(record.coverage)
    models = sorted(by_model)
    means = {m: 100.0 * sum(v) / len(v) for m, v in by_model.items()}
    label = "Coverage (%)"
    widths = [max(len(m), 8) for m in models]
    header = "Model".ljust(len(label)) + "  " + "  ".join(
        m.rjust(w) for m, w in zip(models, widths)
    )
    row = label + "  " + "  ".join(f"{means[m]:.2f}".rjust(w) for m, w in zip(models, widths))
    return header + "\n" + row + "\n"


def save_heatmap(grid_map: np.ndarray, out_path: str | Path, upscale: int = 16) -> None:
    """Dump a map as a grayscale PNG (max-normalized), for eyeballing."""
    peak = float(grid_map.max())
    normalized = grid_map / peak if peak > 0 else np.zeros_like(grid_map)
    pixels = (normalized * 255.0).clip(0, 255).astype(np.uint8)
    image = Image.fromarray(pixels, mode="L")
    if upscale > 1:
        image = image.resize((pixels.shape[1] * upscale, pixels.shape[0] * upscale), Image.Resampling.NEAREST)
    image.save(out_path, format="PNG")
