"""HTTP review API.

Annotators authenticate with static bearer tokens (token -> annotator_id).
The API exposes the pending queue, item detail with both views, verdict
submission, a promotion sweep, and the image files themselves. A bundled
single-page UI can be mounted on top; it talks only to these endpoints.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, StrictBool

from ..errors import VerdictConflictError
from .items import BenchItem
from .review import ReviewStore

log = logging.getLogger(__name__)

VIEWS = ("full", "crop")


class VerdictBody(BaseModel):
    valid: StrictBool
    difficult: StrictBool
    correct: StrictBool


def item_summary(item: BenchItem) -> dict[str, Any]:
    return {
        "item_id": item.item_id,
        "question": item.question,
        "fmt": item.fmt,
        "dimension": item.dimension,
        "status": item.status,
        "verdicts": sorted(v.annotator_id for v in item.review),
    }


def item_detail(item: BenchItem) -> dict[str, Any]:
    detail = item_summary(item)
    detail.update(
        {
            "bbox": list(item.bbox),
            "answer": item.answer,
            "options": list(item.options) if item.options is not None else None,
            "image_urls": {view: f"/items/{item.item_id}/image/{view}" for view in VIEWS},
            "review": [v.to_dict() for v in item.review],
        }
    )
    return detail


def create_app(
    store: ReviewStore,
    tokens: dict[str, str],
    bench_dir: str | Path,
    page_size: int = 20,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    bench_dir = Path(bench_dir)
    app = FastAPI(title="bench review", docs_url=None, redoc_url=None)

    def annotator(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="bearer token required")
        token = authorization.removeprefix("Bearer ").strip()
        annotator_id = tokens.get(token)
        if annotator_id is None:
            raise HTTPException(status_code=403, detail="unknown token")
        return annotator_id

    @app.get("/items")
    def list_items(
        annotator_id: str = Depends(annotator),
        status: str = Query(default="pending"),
        page: int = Query(default=1, ge=1),
    ) -> dict[str, Any]:
        if status not in ("pending", "promoted", "rejected"):
            raise HTTPException(status_code=422, detail=f"unknown status {status!r}")
        items, total = store.list_page(status, page, page_size)
        return {
            "items": [item_summary(i) for i in items],
            "page": page,
            "page_size": page_size,
            "total": total,
            "counts": store.counts(),
        }

    @app.get("/items/{item_id}")
    def get_item(item_id: str, annotator_id: str = Depends(annotator)) -> dict[str, Any]:
        item = store.get(item_id)
        if item is None:
            raise HTTPException(status_code=404, detail=f"no item {item_id}")
        return item_detail(item)

    @app.post("/items/{item_id}/verdict")
    def submit_verdict(
        item_id: str,
        body: VerdictBody,
        annotator_id: str = Depends(annotator),
    ) -> dict[str, Any]:
        try:
            item = store.submit_verdict(
                item_id, annotator_id, body.valid, body.difficult, body.correct
            )
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no item {item_id}")
        except VerdictConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return item_detail(item)

    @app.post("/promote")
    def promote(annotator_id: str = Depends(annotator)) -> dict[str, Any]:
        return {"promoted": store.promote_ready(), "counts": store.counts()}

    @app.get("/items/{item_id}/image/{view}")
    def get_image(item_id: str, view: str, annotator_id: str = Depends(annotator)) -> Response:
        if view not in VIEWS:
            raise HTTPException(status_code=404, detail=f"unknown view {view!r}")
        item = store.get(item_id)
        if item is None:
            raise HTTPException(status_code=404, detail=f"no item {item_id}")
        rel = item.full_image if view == "full" else item.crop_image
        path = bench_dir / rel
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"image file missing: {rel}")
        data = path.read_bytes()
        # The full view is a byte copy of the corpus source, so its real
        # format can disagree with the .jpg naming convention; sniff it.
        media = "image/png" if data[:8] == b"\x89PNG\r\n\x1a\n" else "image/jpeg"
        return Response(content=data, media_type=media)

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
