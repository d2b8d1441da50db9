"""Attention bundle serialization.

One bundle per (model, item) pair, as a directory:

    metadata.json   tensor shapes + provenance fields
    a_st_q.bin      answer-token attention, real question, (L, H, 1, T)
    a_st_qprime.bin same for the generic probe, (L, H, 1, T)
    a_ti.bin        connector attention (L_c, H_c, T, N^2); absent when the
                    metadata marks the connector as "identity" (then T = N^2)

Tensors are float32, little-endian, C order. Metadata is written with
sorted keys and a trailing newline so byte-level comparisons across runs
are meaningful.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ExtractorError


def write_bundle(
    bundle_dir: str | Path,
    *,
    model_id: str,
    item_id: str,
    grid_n: int,
    a_st_q: np.ndarray,
    a_st_qprime: np.ndarray,
    a_ti: np.ndarray | None,
    extra: dict[str, Any] | None = None,
) -> Path:
    bundle_dir = Path(bundle_dir)
    if a_st_q.shape != a_st_qprime.shape or a_st_q.ndim != 4 or a_st_q.shape[2] != 1:
        raise ExtractorError(
            f"answer-token tensors must share shape (L, H, 1, T), got "
            f"{a_st_q.shape} and {a_st_qprime.shape}"
        )
    layers, heads, _, t_tokens = a_st_q.shape
    if a_ti is None and t_tokens != grid_n * grid_n:
        raise ExtractorError(
            f"identity connector requires T == grid_n^2, got T={t_tokens}, N={grid_n}"
        )
    if a_ti is not None and a_ti.shape[2:] != (t_tokens, grid_n * grid_n):
        raise ExtractorError(
            f"connector tensor shape {a_ti.shape} inconsistent with T={t_tokens}, N={grid_n}"
        )

    bundle_dir.mkdir(parents=True, exist_ok=True)
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
    if extra:
        overlap = set(extra) & set(meta)
        if overlap:
            raise ExtractorError(f"extra metadata may not shadow core fields: {sorted(overlap)}")
        meta.update(extra)

    np.ascontiguousarray(a_st_q, dtype="<f4").tofile(bundle_dir / "a_st_q.bin")
    np.ascontiguousarray(a_st_qprime, dtype="<f4").tofile(bundle_dir / "a_st_qprime.bin")
    if a_ti is not None:
        np.ascontiguousarray(a_ti, dtype="<f4").tofile(bundle_dir / "a_ti.bin")
    (bundle_dir / "metadata.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return bundle_dir
