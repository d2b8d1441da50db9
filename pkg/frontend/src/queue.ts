/**
 * Client-side queue state.
 *
 * The server is the source of truth for item status; this layer only
 * tracks what this annotator session should still look at. Items leave
 * the visible queue in two ways, both local: a submitted verdict (the
 * server keeps the item pending until quorum, but this annotator is done
 * with it) and parking (flag-with-comment for items the annotator wants
 * out of the way without a verdict; nothing is sent to the server).
 */

import type { Counts, ItemSummary, QueuePage } from "./api.js";

export interface ParkRecord {
  comment: string;
}

export interface QueueState {
  items: ItemSummary[];
  page: number;
  pageSize: number;
  total: number;
  counts: Counts | null;
  selected: string | null;
  reviewed: Set<string>;
  parked: Map<string, ParkRecord>;
}

export function emptyQueue(): QueueState {
  return {
    items: [],
    page: 1,
    pageSize: 1,
    total: 0,
    counts: null,
    selected: null,
    reviewed: new Set(),
    parked: new Map(),
  };
}

export function withPage(state: QueueState, page: QueuePage): QueueState {
  const next: QueueState = {
    ...state,
    items: page.items,
    page: page.page,
    pageSize: page.page_size,
    total: page.total,
    counts: page.counts,
  };
  if (state.selected && !visibleItems(next).some((i) => i.item_id === state.selected)) {
    next.selected = null;
  }
  return next;
}

export function visibleItems(state: QueueState): ItemSummary[] {
  return state.items.filter(
    (item) => !state.parked.has(item.item_id) && !state.reviewed.has(item.item_id),
  );
}

export function totalPages(state: QueueState): number {
  return Math.max(1, Math.ceil(state.total / Math.max(1, state.pageSize)));
}

export function select(state: QueueState, itemId: string | null): QueueState {
  return { ...state, selected: itemId };
}

function selectByOffset(state: QueueState, offset: number): QueueState {
  const visible = visibleItems(state);
  if (visible.length === 0) return { ...state, selected: null };
  const index = visible.findIndex((i) => i.item_id === state.selected);
  if (index < 0) return { ...state, selected: visible[0]!.item_id };
  const next = Math.min(visible.length - 1, Math.max(0, index + offset));
  return { ...state, selected: visible[next]!.item_id };
}

export function selectNext(state: QueueState): QueueState {
  return selectByOffset(state, 1);
}

export function selectPrev(state: QueueState): QueueState {
  return selectByOffset(state, -1);
}

/** The item after `itemId` in visible order, for auto-advance. */
export function nextAfter(state: QueueState, itemId: string): string | null {
  const visible = visibleItems(state);
  const index = visible.findIndex((i) => i.item_id === itemId);
  if (index < 0) return visible[0]?.item_id ?? null;
  return (visible[index + 1] ?? visible[index - 1])?.item_id ?? null;
}

export function markReviewed(state: QueueState, itemId: string): QueueState {
  const reviewed = new Set(state.reviewed);
  reviewed.add(itemId);
  const next = { ...state, reviewed };
  if (next.selected === itemId) next.selected = null;
  return next;
}

export function park(state: QueueState, itemId: string, comment: string): QueueState {
  const parked = new Map(state.parked);
  parked.set(itemId, { comment });
  const next = { ...state, parked };
  if (next.selected === itemId) next.selected = null;
  return next;
}

export function unpark(state: QueueState, itemId: string): QueueState {
  const parked = new Map(state.parked);
  parked.delete(itemId);
  return { ...state, parked };
}
