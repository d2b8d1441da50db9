/**
 * Application wiring: one queue panel, one item panel, one banner.
 *
 * Submission is optimistic: the item leaves this annotator's visible
 * queue immediately and the server response reconciles the final status.
 * A 409 conflict (the item was decided while we looked at it) surfaces
 * as a banner and forces a queue refresh, per the stale-item rule.
 */

import { ApiError, ReviewApi } from "./api.js";
import type { ItemDetail, View } from "./api.js";
import * as queue from "./queue.js";
import { renderBanner, renderItem, renderQueue, VIEWS } from "./render.js";
import type { ItemViewModel } from "./render.js";
import * as verdict from "./verdict.js";
import type { Flag } from "./verdict.js";
import * as view from "./view.js";
import type { ViewTransform } from "./view.js";

export interface AppController {
  start(): Promise<void>;
  select(itemId: string): Promise<void>;
  refresh(): Promise<void>;
  readonly state: AppState;
}

export interface AppState {
  queue: queue.QueueState;
  detail: ItemDetail | null;
  images: Partial<Record<View, string>>;
  draft: verdict.VerdictDraft;
  overlayOn: boolean;
  transforms: Record<View, ViewTransform>;
  banner: string | null;
  busy: boolean;
}

function freshTransforms(): Record<View, ViewTransform> {
  return { full: view.reset(), crop: view.reset() };
}

export function createApp(root: HTMLElement, api: ReviewApi): AppController {
  const state: AppState = {
    queue: queue.emptyQueue(),
    detail: null,
    images: {},
    draft: verdict.emptyDraft(),
    overlayOn: false,
    transforms: freshTransforms(),
    banner: null,
    busy: false,
  };

  root.textContent = "";
  const layout = document.createElement("div");
  layout.className = "layout";
  const queuePanel = document.createElement("aside");
  queuePanel.className = "queue-panel";
  const itemPanel = document.createElement("section");
  itemPanel.className = "item-panel";
  const bannerPanel = document.createElement("div");
  bannerPanel.className = "banner-panel";
  layout.append(queuePanel, itemPanel);
  root.append(bannerPanel, layout);

  function render(): void {
    renderQueue(queuePanel, state.queue, {
      onSelect: (id) => void select(id),
      onPage: (delta) => void turnPage(delta),
      onUnpark: (id) => {
        state.queue = queue.unpark(state.queue, id);
        render();
      },
    });
    const vm: ItemViewModel | null = state.detail
      ? {
          detail: state.detail,
          images: state.images,
          draft: state.draft,
          overlayOn: state.overlayOn,
          transforms: state.transforms,
          busy: state.busy,
        }
      : null;
    renderItem(itemPanel, vm, {
      onFlag: (flag, value) => {
        state.draft = verdict.setFlag(state.draft, flag, value);
        render();
      },
      onSubmit: () => void submit(),
      onOverlayToggle: () => {
        state.overlayOn = !state.overlayOn;
        render();
      },
      onZoom: (which, factor) => {
        state.transforms = { ...state.transforms, [which]: view.zoom(state.transforms[which], factor) };
        render();
      },
      onZoomReset: (which) => {
        state.transforms = { ...state.transforms, [which]: view.reset() };
        render();
      },
      onPark: (comment) => {
        if (!state.detail) return;
        state.queue = queue.park(state.queue, state.detail.item_id, comment || "(no comment)");
        state.detail = null;
        state.images = {};
        state.draft = verdict.emptyDraft();
        render();
      },
    });
    renderBanner(bannerPanel, state.banner);
  }

  async function loadPage(page: number): Promise<void> {
    const result = await api.listItems("pending", page);
    state.queue = queue.withPage(state.queue, result);
    if (state.queue.selected === null && state.detail !== null) {
      state.detail = null;
      state.images = {};
      state.draft = verdict.emptyDraft();
    }
  }

  async function turnPage(delta: number): Promise<void> {
    const target = Math.min(queue.totalPages(state.queue), Math.max(1, state.queue.page + delta));
    if (target === state.queue.page) return;
    try {
      await loadPage(target);
    } catch (err) {
      state.banner = describe(err);
    }
    render();
  }

  async function select(itemId: string): Promise<void> {
    state.queue = queue.select(state.queue, itemId);
    state.draft = verdict.emptyDraft();
    state.transforms = freshTransforms();
    state.overlayOn = false;
    state.images = {};
    state.banner = null;
    try {
      state.detail = await api.getItem(itemId);
    } catch (err) {
      state.detail = null;
      state.banner = describe(err);
      render();
      return;
    }
    // Both views load in parallel; a failed view stays missing, which
    // keeps the submit button disabled rather than allowing a
    // single-view verdict.
    const results = await Promise.allSettled(
      VIEWS.map(async (which) => [which, await api.fetchImage(itemId, which)] as const),
    );
    for (const result of results) {
      if (result.status === "fulfilled") {
        const [which, uri] = result.value;
        state.images[which] = uri;
      }
    }
    const missing = VIEWS.filter((which) => state.images[which] === undefined);
    if (missing.length > 0) {
      state.banner = `could not load ${missing.join(" and ")} view; submission blocked`;
    }
    render();
  }

  async function submit(): Promise<void> {
    const detail = state.detail;
    const complete = verdict.completed(state.draft);
    const bothViews = VIEWS.every((which) => state.images[which] !== undefined);
    if (!detail || !complete || !bothViews || state.busy) return;
    state.busy = true;
    render();
    try {
      const updated = await api.submitVerdict(detail.item_id, complete);
      state.queue = queue.markReviewed(state.queue, detail.item_id);
      let outcome: string;
      if (updated.status === "promoted") {
        outcome = `item ${detail.item_id} promoted`;
      } else if (updated.status === "rejected") {
        outcome = `item ${detail.item_id} rejected`;
      } else {
        outcome = `verdict recorded for ${detail.item_id}; awaiting other annotators`;
      }
      state.banner = outcome;
      state.detail = null;
      state.images = {};
      state.draft = verdict.emptyDraft();
      const next = queue.nextAfter(state.queue, detail.item_id);
      state.busy = false;
      if (next) {
        await select(next);
        // selecting wipes stale banners; the outcome of the submit we
        // just made is not stale yet, so put it back.
        state.banner = outcome;
        render();
        return;
      }
    } catch (err) {
      state.busy = false;
      if (err instanceof ApiError && err.status === 409) {
        state.banner = `item was already decided elsewhere: ${err.message}`;
        await refresh();
        return;
      }
      state.banner = describe(err);
    }
    state.busy = false;
    render();
  }

  async function refresh(): Promise<void> {
    try {
      await loadPage(state.queue.page);
      const selected = state.queue.selected;
      if (selected) {
        state.detail = await api.getItem(selected);
      } else {
        state.detail = null;
        state.images = {};
        state.draft = verdict.emptyDraft();
      }
    } catch (err) {
      state.banner = describe(err);
    }
    render();
  }

  function onKey(event: KeyboardEvent): void {
    const target = event.target as HTMLElement | null;
    if (target && target.tagName === "INPUT") return;
    const flagKeys: Record<string, Flag> = { v: "valid", d: "difficult", c: "correct" };
    if (event.key === "j") {
      state.queue = queue.selectNext(state.queue);
      const selected = state.queue.selected;
      if (selected) void select(selected);
    } else if (event.key === "k") {
      state.queue = queue.selectPrev(state.queue);
      const selected = state.queue.selected;
      if (selected) void select(selected);
    } else if (event.key in flagKeys && state.detail) {
      state.draft = verdict.cycleFlag(state.draft, flagKeys[event.key]!);
      render();
    } else if (event.key === "o" && state.detail) {
      state.overlayOn = !state.overlayOn;
      render();
    } else if (event.key === "Enter" && state.detail) {
      void submit();
    }
  }
  root.addEventListener("keydown", onKey);

  function describe(err: unknown): string {
    if (err instanceof ApiError) return `server error ${err.status}: ${err.message}`;
    return err instanceof Error ? err.message : String(err);
  }

  return {
    state,
    select,
    refresh,
    async start(): Promise<void> {
      try {
        await loadPage(1);
      } catch (err) {
        state.banner = describe(err);
      }
      render();
    },
  };
}
