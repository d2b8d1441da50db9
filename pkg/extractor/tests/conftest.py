from __future__ import annotations

import json
from pathlib import Path

import pytest
from PIL import Image


def _gradient(width: int, height: int) -> Image.Image:
    img = Image.new("RGB", (width, height))
    img.putdata(
        [
            (x * 255 // max(width - 1, 1), y * 255 // max(height - 1, 1), (x + y) % 256)
            for y in range(height)
            for x in range(width)
        ]
    )
    return img


@pytest.fixture()
def images(tmp_path: Path) -> Path:
    root = tmp_path / "imgs"
    root.mkdir()
    _gradient(64, 48).save(root / "scene_a.png")
    blocks = Image.new("RGB", (40, 40), (30, 60, 90))
    for x in range(20, 40):
        for y in range(0, 20):
            blocks.putpixel((x, y), (220, 40, 40))
    blocks.save(root / "scene_b.png")
    return root


@pytest.fixture()
def job_file(tmp_path: Path, images: Path):
    """Writer for job files; call with overrides, get the path back."""

    def write(**overrides) -> Path:
        doc = {
            "model_id": "toy-identity",
            "output_dir": "bundles",
            "items": [
                {
                    "item_id": "scene_a.q0",
                    "image": str(images / "scene_a.png"),
                    "question": "How many jars are on the shelf?",
                    "bbox": [8, 8, 40, 32],
                },
                {
                    "item_id": "scene_b.q0",
                    "image": str(images / "scene_b.png"),
                    "question": "What color is the box in the corner?",
                    "bbox": [20, 0, 40, 20],
                },
            ],
        }
        doc.update(overrides)
        path = tmp_path / "job.json"
        path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
        return path

    return write
