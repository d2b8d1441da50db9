/**
 * DOM rendering. Whole-panel rebuild on every state change; at review
 * scale (tens of items, two images) that is simpler and safer than
 * incremental patching.
 *
 * Submission is physically blocked unless both image views rendered:
 * the submit button stays disabled and carries a reason, so a verdict
 * can never be formed from a single view.
 */

import type { ItemDetail, View } from "./api.js";
import type { QueueState } from "./queue.js";
import { totalPages, visibleItems } from "./queue.js";
import type { Flag, VerdictDraft } from "./verdict.js";
import { FLAGS, isComplete } from "./verdict.js";
import type { ViewTransform } from "./view.js";
import { cssTransform } from "./view.js";

export const VIEWS: readonly View[] = ["full", "crop"];
const LETTERS = "ABCDEFGH";

export interface QueueCallbacks {
  onSelect(itemId: string): void;
  onPage(delta: number): void;
  onUnpark(itemId: string): void;
}

export interface ItemCallbacks {
  onFlag(flag: Flag, value: boolean): void;
  onSubmit(): void;
  onOverlayToggle(): void;
  onZoom(view: View, factor: number): void;
  onZoomReset(view: View): void;
  onPark(comment: string): void;
}

export interface ItemViewModel {
  detail: ItemDetail;
  images: Partial<Record<View, string>>;
  draft: VerdictDraft;
  overlayOn: boolean;
  transforms: Record<View, ViewTransform>;
  busy: boolean;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

function chip(status: string): HTMLElement {
  return el("span", { class: `chip chip-${status}`, "data-testid": "chip" }, status);
}

export function renderQueue(container: HTMLElement, state: QueueState, cb: QueueCallbacks): void {
  container.textContent = "";
  const counts = state.counts;
  if (counts) {
    container.append(
      el(
        "p",
        { class: "counts", "data-testid": "counts" },
        `pending ${counts.pending} / promoted ${counts.promoted} / rejected ${counts.rejected}`,
      ),
    );
  }

  const visible = visibleItems(state);
  if (visible.length === 0) {
    container.append(
      el("p", { class: "empty-state", "data-testid": "empty-state" }, "No items waiting for review."),
    );
  } else {
    const list = el("ul", { class: "queue-list" });
    for (const item of visible) {
      const row = el("button", {
        class: item.item_id === state.selected ? "queue-row selected" : "queue-row",
        "data-testid": "queue-row",
        "data-id": item.item_id,
        type: "button",
      });
      row.append(
        el("span", { class: "row-question" }, item.question),
        el("span", { class: "row-meta" }, `${item.dimension} · ${item.fmt}`),
        chip(item.status),
      );
      row.addEventListener("click", () => cb.onSelect(item.item_id));
      const li = el("li");
      li.append(row);
      list.append(li);
    }
    container.append(list);
  }

  const pages = totalPages(state);
  const nav = el("nav", { class: "pager" });
  const prev = el("button", { type: "button", "data-testid": "page-prev" }, "prev");
  const next = el("button", { type: "button", "data-testid": "page-next" }, "next");
  prev.disabled = state.page <= 1;
  next.disabled = state.page >= pages;
  prev.addEventListener("click", () => cb.onPage(-1));
  next.addEventListener("click", () => cb.onPage(1));
  nav.append(prev, el("span", { "data-testid": "page-label" }, `page ${state.page} of ${pages}`), next);
  container.append(nav);

  if (state.parked.size > 0) {
    const details = el("details", { class: "parked", "data-testid": "parked-section" });
    details.append(el("summary", {}, `parked (${state.parked.size})`));
    for (const [itemId, record] of state.parked) {
      const row = el("div", { class: "parked-row", "data-id": itemId });
      row.append(el("span", {}, `${itemId}: ${record.comment}`));
      const unpark = el("button", { type: "button", "data-testid": "unpark" }, "unpark");
      unpark.addEventListener("click", () => cb.onUnpark(itemId));
      row.append(unpark);
      details.append(row);
    }
    container.append(details);
  }
}

function renderViewFigure(
  view: View,
  vm: ItemViewModel,
  cb: ItemCallbacks,
): HTMLElement {
  const figure = el("figure", { class: "image-view", "data-view": view });
  figure.append(el("figcaption", {}, view === "full" ? "full image" : "region crop"));

  const frame = el("div", { class: "image-frame" });
  const dataUri = vm.images[view];
  if (dataUri) {
    const img = el("img", {
      src: dataUri,
      alt: `${view} view`,
      "data-testid": `img-${view}`,
    });
    img.style.transform = cssTransform(vm.transforms[view]);
    frame.append(img);
    if (view === "full") {
      // Reviewer orientation only: a client-side outline over the target
      // region. The server image bytes are untouched; hiding or showing
      // this never refetches anything.
      const overlay = el("div", { class: "bbox-outline", "data-testid": "bbox-overlay" });
      overlay.hidden = !vm.overlayOn;
      overlay.style.transform = cssTransform(vm.transforms[view]);
      frame.append(overlay);
    }
  } else {
    frame.append(
      el("p", { class: "view-missing", "data-testid": `missing-${view}` }, `${view} view failed to load`),
    );
  }
  figure.append(frame);

  const controls = el("div", { class: "zoom-controls" });
  const zoomIn = el("button", { type: "button", "data-testid": `zoom-in-${view}` }, "+");
  const zoomOut = el("button", { type: "button", "data-testid": `zoom-out-${view}` }, "−");
  const resetBtn = el("button", { type: "button", "data-testid": `zoom-reset-${view}` }, "reset");
  zoomIn.addEventListener("click", () => cb.onZoom(view, 1.25));
  zoomOut.addEventListener("click", () => cb.onZoom(view, 0.8));
  resetBtn.addEventListener("click", () => cb.onZoomReset(view));
  controls.append(zoomIn, zoomOut, resetBtn);
  if (view === "full") {
    const toggle = el("button", { type: "button", "data-testid": "overlay-toggle" });
    toggle.textContent = vm.overlayOn ? "hide region outline" : "show region outline";
    toggle.addEventListener("click", () => cb.onOverlayToggle());
    controls.append(toggle);
  }
  figure.append(controls);
  return figure;
}

function renderAnswerBlock(detail: ItemDetail): HTMLElement {
  const block = el("div", { class: "answer-block" });
  if (detail.fmt === "mcq" && detail.options) {
    const gold = typeof detail.answer === "object" ? detail.answer.letter : "";
    const list = el("ol", { class: "options", "data-testid": "options" });
    detail.options.forEach((option, i) => {
      const letter = LETTERS[i] ?? "?";
      const item = el(
        "li",
        {
          class: letter === gold ? "option gold" : "option",
          "data-letter": letter,
        },
        `${letter}. ${option}`,
      );
      list.append(item);
    });
    block.append(list);
  } else {
    const text = typeof detail.answer === "string" ? detail.answer : detail.answer.text;
    block.append(el("p", { class: "gold-answer", "data-testid": "gold-answer" }, `answer: ${text}`));
  }
  return block;
}

const FLAG_LABELS: Record<Flag, string> = {
  valid: "valid question",
  difficult: "needs the region",
  correct: "answer correct",
};

function renderVerdictPanel(vm: ItemViewModel, cb: ItemCallbacks): HTMLElement {
  const panel = el("div", { class: "verdict-panel" });
  for (const flag of FLAGS) {
    const row = el("div", { class: "flag-row", "data-flag": flag });
    row.append(el("span", { class: "flag-label" }, FLAG_LABELS[flag]));
    const yes = el("button", { type: "button", "data-testid": `flag-${flag}-yes` }, "yes");
    const no = el("button", { type: "button", "data-testid": `flag-${flag}-no` }, "no");
    const value = vm.draft[flag];
    if (value === true) yes.classList.add("active");
    if (value === false) no.classList.add("active");
    yes.addEventListener("click", () => cb.onFlag(flag, true));
    no.addEventListener("click", () => cb.onFlag(flag, false));
    row.append(yes, no);
    panel.append(row);
  }

  const bothViews = VIEWS.every((view) => vm.images[view] !== undefined);
  const submit = el("button", {
    type: "button",
    class: "submit-verdict",
    "data-testid": "submit-verdict",
  });
  submit.textContent = "submit verdict";
  submit.disabled = vm.busy || !bothViews || !isComplete(vm.draft);
  if (!bothViews) {
    submit.title = "both views must render before a verdict can be submitted";
  } else if (!isComplete(vm.draft)) {
    submit.title = "set all three flags first";
  }
  submit.addEventListener("click", () => cb.onSubmit());
  panel.append(submit);

  const parkRow = el("div", { class: "park-row" });
  const comment = el("input", {
    type: "text",
    placeholder: "why park this item?",
    "data-testid": "park-comment",
  });
  const parkBtn = el("button", { type: "button", "data-testid": "park-btn" }, "park");
  parkBtn.addEventListener("click", () => cb.onPark(comment.value));
  parkRow.append(comment, parkBtn);
  panel.append(parkRow);
  return panel;
}

export function renderItem(
  container: HTMLElement,
  vm: ItemViewModel | null,
  cb: ItemCallbacks,
): void {
  container.textContent = "";
  if (vm === null) {
    container.append(
      el("p", { class: "placeholder", "data-testid": "item-placeholder" }, "Select an item to review."),
    );
    return;
  }
  const { detail } = vm;
  const header = el("div", { class: "item-header" });
  header.append(
    el("h2", { "data-testid": "item-question" }, detail.question),
    el("span", { class: "item-meta" }, `${detail.dimension} · ${detail.fmt} · ${detail.item_id}`),
    chip(detail.status),
  );
  container.append(header);

  const views = el("div", { class: "views" });
  for (const view of VIEWS) views.append(renderViewFigure(view, vm, cb));
  container.append(views);

  container.append(renderAnswerBlock(detail));
  container.append(renderVerdictPanel(vm, cb));
}

export function renderBanner(container: HTMLElement, message: string | null): void {
  container.textContent = "";
  if (message) {
    container.append(el("p", { class: "banner", "data-testid": "banner" }, message));
  }
}
