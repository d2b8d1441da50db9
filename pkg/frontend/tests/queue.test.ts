import { describe, expect, it } from "vitest";

import type { ItemSummary, QueuePage } from "../src/api.js";
import {
  emptyQueue,
  markReviewed,
  nextAfter,
  park,
  select,
  selectNext,
  selectPrev,
  totalPages,
  unpark,
  visibleItems,
  withPage,
} from "../src/queue.js";

function summary(id: string): ItemSummary {
  return {
    item_id: id,
    question: `Question about ${id}?`,
    fmt: "open",
    dimension: "counting",
    status: "pending",
    verdicts: [],
  };
}

function page(ids: string[], total = ids.length, pageNo = 1, pageSize = 10): QueuePage {
  return {
    items: ids.map(summary),
    page: pageNo,
    page_size: pageSize,
    total,
    counts: { pending: total, promoted: 0, rejected: 0 },
  };
}

describe("queue state", () => {
  it("stores a page and computes page count", () => {
    const state = withPage(emptyQueue(), page(["a", "b"], 25, 2, 10));
    expect(visibleItems(state).map((i) => i.item_id)).toEqual(["a", "b"]);
    expect(state.page).toBe(2);
    expect(totalPages(state)).toBe(3);
  });

  it("never reports fewer than one page", () => {
    expect(totalPages(emptyQueue())).toBe(1);
    const state = withPage(emptyQueue(), page([]));
    expect(totalPages(state)).toBe(1);
    expect(visibleItems(state)).toEqual([]);
  });

  it("parked items disappear from the visible queue and come back on unpark", () => {
    let state = withPage(emptyQueue(), page(["a", "b", "c"]));
    state = park(state, "b", "duplicate of a");
    expect(visibleItems(state).map((i) => i.item_id)).toEqual(["a", "c"]);
    expect(state.parked.get("b")?.comment).toBe("duplicate of a");
    state = unpark(state, "b");
    expect(visibleItems(state).map((i) => i.item_id)).toEqual(["a", "b", "c"]);
  });

  it("reviewed items leave the visible queue even though the server keeps them pending", () => {
    let state = withPage(emptyQueue(), page(["a", "b"]));
    state = markReviewed(state, "a");
    expect(visibleItems(state).map((i) => i.item_id)).toEqual(["b"]);
    // A refresh from the server still lists the item; it stays hidden.
    state = withPage(state, page(["a", "b"]));
    expect(visibleItems(state).map((i) => i.item_id)).toEqual(["b"]);
  });

  it("selection moves over visible items only and clamps at the ends", () => {
    let state = withPage(emptyQueue(), page(["a", "b", "c"]));
    state = selectNext(state);
    expect(state.selected).toBe("a");
    state = selectNext(state);
    expect(state.selected).toBe("b");
    state = park(state, "c", "broken image");
    state = selectNext(state);
    expect(state.selected).toBe("b");
    state = selectPrev(state);
    expect(state.selected).toBe("a");
    state = selectPrev(state);
    expect(state.selected).toBe("a");
  });

  it("parking or reviewing the selected item clears the selection", () => {
    let state = withPage(emptyQueue(), page(["a", "b"]));
    state = select(state, "a");
    state = markReviewed(state, "a");
    expect(state.selected).toBeNull();
    state = select(state, "b");
    state = park(state, "b", "unclear");
    expect(state.selected).toBeNull();
  });

  it("a page refresh drops a selection that is no longer visible", () => {
    let state = withPage(emptyQueue(), page(["a", "b"]));
    state = select(state, "a");
    state = withPage(state, page(["b"]));
    expect(state.selected).toBeNull();
  });

  it("nextAfter walks forward, falls back to the previous item, then null", () => {
    let state = withPage(emptyQueue(), page(["a", "b", "c"]));
    expect(nextAfter(state, "a")).toBe("b");
    expect(nextAfter(state, "c")).toBe("b");
    state = markReviewed(state, "b");
    expect(nextAfter(state, "a")).toBe("c");
    state = markReviewed(state, "a");
    state = markReviewed(state, "c");
    expect(nextAfter(state, "c")).toBeNull();
  });
});
