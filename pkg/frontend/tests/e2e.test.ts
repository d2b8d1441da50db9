// @vitest-environment happy-dom
// @vitest-environment-options {"url": "http://127.0.0.1:8734"}
/**
 * End to end against the real review API: a spawned server process, the
 * real HTTP client, and the app driven through DOM events in a headless
 * document. The document URL above matches the server origin so the
 * environment's same-origin policy lets the requests through, like the
 * served ui does in a real browser.
 */

import { spawn } from "node:child_process";
import type { ChildProcess } from "node:child_process";
import { mkdtempSync, mkdirSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ReviewApi } from "../src/api.js";
import { createApp } from "../src/app.js";
import type { AppController } from "../src/app.js";

const CONFIG = "/root/pkg/tests/fixtures/config.yaml";
// Must agree with the environment-options url in the docblock.
const PORT = 8734;
const BASE = `http://127.0.0.1:${PORT}`;

const TOKENS = { ada: "tok-ada", bo: "tok-bo", cy: "tok-cy" } as const;

let server: ChildProcess;
let benchDir: string;

function writeBench(): string {
  const dir = mkdtempSync(join(tmpdir(), "bench-e2e-"));
  mkdirSync(join(dir, "images"));
  const pngMagic = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);
  const jpegMagic = Buffer.from([0xff, 0xd8, 0xff, 0xe0]);
  const items = [
    {
      item_id: "e0",
      image_id: "img0",
      bbox: [2, 2, 20, 20],
      question: "How many mugs are on the tray?",
      fmt: "mcq",
      answer: { letter: "A", text: "three" },
      options: ["three", "two", "five", "four"],
      dimension: "counting",
    },
    {
      item_id: "e1",
      image_id: "img1",
      bbox: [4, 4, 30, 24],
      question: "What color is the folder under the lamp?",
      fmt: "open",
      answer: "blue",
      options: null,
      dimension: "color",
    },
    {
      item_id: "e2",
      image_id: "img2",
      bbox: [1, 1, 16, 16],
      question: "What material is the small tray?",
      fmt: "open",
      answer: "wood",
      options: null,
      dimension: "material",
    },
  ];
  const rows = items.map((item) => {
    writeFileSync(
      join(dir, "images", `${item.item_id}.full.jpg`),
      Buffer.concat([pngMagic, Buffer.from(`full:${item.item_id}`)]),
    );
    writeFileSync(
      join(dir, "images", `${item.item_id}.crop.jpg`),
      Buffer.concat([jpegMagic, Buffer.from(`crop:${item.item_id}`)]),
    );
    return JSON.stringify({
      ...item,
      full_image: `images/${item.item_id}.full.jpg`,
      crop_image: `images/${item.item_id}.crop.jpg`,
      status: "pending",
      review: [],
    });
  });
  writeFileSync(join(dir, "items.jsonl"), rows.join("\n") + "\n");
  return dir;
}

async function until<T>(
  probe: () => T | null | undefined | false,
  what: string,
  timeoutMs = 10_000,
): Promise<T> {
  const start = Date.now();
  for (;;) {
    const value = probe();
    if (value) return value;
    if (Date.now() - start > timeoutMs) throw new Error(`timed out waiting for ${what}`);
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
}

async function serverReady(): Promise<void> {
  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/items`, {
        headers: { Authorization: `Bearer ${TOKENS.ada}` },
      });
      if (res.ok) return;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) throw new Error("review API never came up");
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
}

function mount(): HTMLElement {
  const root = document.createElement("main");
  document.body.append(root);
  return root;
}

function rows(root: HTMLElement): HTMLElement[] {
  return [...root.querySelectorAll<HTMLElement>("[data-testid='queue-row']")];
}

function click(root: HTMLElement, selector: string): void {
  const el = root.querySelector<HTMLElement>(selector);
  if (!el) throw new Error(`no element ${selector}`);
  el.click();
}

/** Open an item, wait for both views, set three yes flags, submit. */
async function approveThroughDom(root: HTMLElement, itemId: string): Promise<void> {
  await until(() => rows(root).some((r) => r.dataset.id === itemId), `queue row ${itemId}`);
  click(root, `[data-testid='queue-row'][data-id='${itemId}']`);
  await until(
    () =>
      root.querySelector<HTMLImageElement>("[data-testid='img-full']")?.src.startsWith("data:image/") &&
      root.querySelector<HTMLImageElement>("[data-testid='img-crop']")?.src.startsWith("data:image/"),
    `both views of ${itemId}`,
  );
  for (const flag of ["valid", "difficult", "correct"]) {
    click(root, `[data-testid='flag-${flag}-yes']`);
  }
  const submit = await until(
    () => root.querySelector<HTMLButtonElement>("[data-testid='submit-verdict']:not([disabled])"),
    "enabled submit button",
  );
  submit.click();
  await until(
    () => !rows(root).some((r) => r.dataset.id === itemId),
    `${itemId} to leave the visible queue`,
  );
}

beforeAll(async () => {
  benchDir = writeBench();
  server = spawn(
    "regionvqa",
    ["review-serve", "--config", CONFIG, "--bench-dir", benchDir, "--port", String(PORT)],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stderr?.on("data", () => undefined);
  await serverReady();
});

afterAll(() => {
  server.kill();
});

describe("review ui against the live API", () => {
  it("lets one annotator review an item and watch it leave the queue", async () => {
    const root = mount();
    const app: AppController = createApp(root, new ReviewApi(BASE, TOKENS.ada));
    await app.start();
    expect(rows(root)).toHaveLength(3);

    click(root, "[data-testid='queue-row'][data-id='e2']");
    const fullImg = await until(
      () => root.querySelector<HTMLImageElement>("[data-testid='img-full']"),
      "full view",
    );
    // Authenticated bytes, inlined: the png source behind the jpg name
    // must surface with its sniffed content type.
    expect(fullImg.src.startsWith("data:image/png;base64,")).toBe(true);
    const cropImg = await until(
      () => root.querySelector<HTMLImageElement>("[data-testid='img-crop']"),
      "crop view",
    );
    expect(cropImg.src.startsWith("data:image/jpeg;base64,")).toBe(true);
    expect(root.textContent).toContain("What material is the small tray?");

    const submitBefore = root.querySelector<HTMLButtonElement>("[data-testid='submit-verdict']");
    expect(submitBefore?.disabled).toBe(true);

    for (const flag of ["valid", "difficult", "correct"]) {
      click(root, `[data-testid='flag-${flag}-yes']`);
    }
    const submit = await until(
      () => root.querySelector<HTMLButtonElement>("[data-testid='submit-verdict']:not([disabled])"),
      "enabled submit",
    );
    submit.click();

    await until(() => rows(root).length === 2, "queue to shrink to 2");
    expect(rows(root).map((r) => r.dataset.id)).toEqual(["e0", "e1"]);
    const banner = await until(
      () => root.ownerDocument.querySelector("[data-testid='banner']"),
      "banner",
    );
    expect(banner.textContent).toContain("verdict recorded");

    // The server still holds e2 pending (one verdict, quorum is three);
    // only this annotator's queue dropped it.
    const raw = new ReviewApi(BASE, TOKENS.ada);
    const pending = await raw.listItems("pending");
    expect(pending.items.map((i) => i.item_id)).toContain("e2");
    root.remove();
  });

  it("promotes an item after three scripted annotator sessions approve it", async () => {
    for (const who of ["ada", "bo", "cy"] as const) {
      const root = mount();
      const app = createApp(root, new ReviewApi(BASE, TOKENS[who]));
      await app.start();
      await approveThroughDom(root, "e0");
      if (who === "cy") {
        const banner = await until(
          () => document.querySelector("[data-testid='banner']"),
          "promotion banner",
        );
        expect(banner.textContent).toContain("promoted");
      }
      root.remove();
    }

    const raw = new ReviewApi(BASE, TOKENS.ada);
    const promoted = await raw.listItems("promoted");
    expect(promoted.items.map((i) => i.item_id)).toContain("e0");
    const pending = await raw.listItems("pending");
    expect(pending.items.map((i) => i.item_id)).not.toContain("e0");
  });

  it("surfaces a conflict banner and refreshes when the item was decided elsewhere", async () => {
    const root = mount();
    const app = createApp(root, new ReviewApi(BASE, TOKENS.bo));
    await app.start();
    await until(() => rows(root).some((r) => r.dataset.id === "e1"), "e1 in bo's queue");

    // Another annotator rejects e1 while bo is looking at the queue.
    const ada = new ReviewApi(BASE, TOKENS.ada);
    await ada.submitVerdict("e1", { valid: true, difficult: true, correct: false });

    click(root, "[data-testid='queue-row'][data-id='e1']");
    await until(
      () => root.querySelector<HTMLImageElement>("[data-testid='img-crop']"),
      "views of e1",
    );
    for (const flag of ["valid", "difficult", "correct"]) {
      click(root, `[data-testid='flag-${flag}-yes']`);
    }
    const submit = await until(
      () => root.querySelector<HTMLButtonElement>("[data-testid='submit-verdict']:not([disabled])"),
      "enabled submit",
    );
    submit.click();

    const banner = await until(
      () => document.querySelector("[data-testid='banner']"),
      "conflict banner",
    );
    await until(
      () => banner.textContent?.includes("already decided"),
      "conflict message",
    );
    await until(() => !rows(root).some((r) => r.dataset.id === "e1"), "e1 gone after refresh");
    root.remove();
  });
});
