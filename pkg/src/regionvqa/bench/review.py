"""Review workflow: verdicts and the promotion state machine.

Items start pending. Each annotator may hold one verdict per item (a later
submission replaces the earlier one). Any verdict with a false flag rejects
the item immediately; an item is promoted once the configured quorum of
distinct annotators have all three flags true. Promoted and rejected items
refuse further verdicts with a conflict error, which also makes promotion
monotone: no later verdict can demote an item.
"""

from __future__ import annotations

import logging
import threading
import time
from pathlib import Path
from typing import Callable

from ..errors import StageError, VerdictConflictError
from .items import BenchItem, ReviewVerdict, load_items, save_items

log = logging.getLogger(__name__)


class ReviewStore:
    """Serialized access to the bench items file during review.

    Every state change rewrites the items file atomically, so a crash never
    loses an accepted verdict and the review server can restart cold.
    """

    def __init__(
        self,
        items_path: str | Path,
        quorum: int = 3,
        clock: Callable[[], float] = time.time,
    ):
        self.items_path = Path(items_path)
        if not self.items_path.exists():
            raise StageError(f"bench items file not found: {self.items_path}")
        self.quorum = quorum
        self._clock = clock
        self._lock = threading.Lock()
        self._items: dict[str, BenchItem] = {i.item_id: i for i in load_items(self.items_path)}

    # -- queries

    def get(self, item_id: str) -> BenchItem | None:
        with self._lock:
            return self._items.get(item_id)

    def all_items(self) -> list[BenchItem]:
        with self._lock:
            return sorted(self._items.values(), key=lambda i: i.item_id)

    def list_page(self, status: str, page: int, page_size: int) -> tuple[list[BenchItem], int]:
        """One page of items with the given status, plus the total count."""
        with self._lock:
            matching = sorted(
                (i for i in self._items.values() if i.status == status),
                key=lambda i: i.item_id,
            )
        start = (page - 1) * page_size
        return matching[start : start + page_size], len(matching)

    def counts(self) -> dict[str, int]:
        with self._lock:
            out = {"pending": 0, "promoted": 0, "rejected": 0}
            for item in self._items.values():
                out[item.status] = out.get(item.status, 0) + 1
            return out

    # -- transitions

    def submit_verdict(
        self,
        item_id: str,
        annotator_id: str,
        valid: bool,
        difficult: bool,
        correct: bool,
    ) -> BenchItem:
        with self._lock:
            item = self._items.get(item_id)
            if item is None:
                raise KeyError(item_id)
            if item.status != "pending":
                raise VerdictConflictError(
                    f"item {item_id} is already {item.status}; verdicts are closed"
                )
            verdict = ReviewVerdict(
                annotator_id=annotator_id,
                valid=valid,
                difficult=difficult,
                correct=correct,
                timestamp=self._clock(),
            )
            item.review = [v for v in item.review if v.annotator_id != annotator_id]
            item.review.append(verdict)
            if not verdict.all_true():
                item.status = "rejected"
            else:
                self._maybe_promote(item)
            self._persist()
            return item

    def _maybe_promote(self, item: BenchItem) -> bool:
        approvers = {v.annotator_id for v in item.review if v.all_true()}
        if item.status == "pending" and len(approvers) >= self.quorum:
            item.status = "promoted"
            return True
        return False

    def promote_ready(self) -> int:
        """Sweep pending items and promote any that meet the quorum."""
        with self._lock:
            promoted = sum(
                1 for item in self._items.values()
                if item.status == "pending" and self._maybe_promote(item)
            )
            if promoted:
                self._persist()
            return promoted

    def _persist(self) -> None:
        save_items(self.items_path, list(self._items.values()))
