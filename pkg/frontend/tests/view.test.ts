import { describe, expect, it } from "vitest";

import { IDENTITY, MAX_SCALE, MIN_SCALE, cssTransform, pan, reset, zoom } from "../src/view.js";

describe("view transform", () => {
  it("zoom multiplies and clamps to the scale bounds", () => {
    let t = reset();
    t = zoom(t, 2);
    expect(t.scale).toBe(2);
    for (let i = 0; i < 20; i++) t = zoom(t, 2);
    expect(t.scale).toBe(MAX_SCALE);
    for (let i = 0; i < 40; i++) t = zoom(t, 0.5);
    expect(t.scale).toBe(MIN_SCALE);
  });

  it("pan accumulates offsets independently of scale", () => {
    let t = zoom(reset(), 3);
    t = pan(t, 10, -4);
    t = pan(t, -2, 6);
    expect(t).toEqual({ scale: 3, dx: 8, dy: 2 });
  });

  it("reset returns the identity and a fresh object", () => {
    const t = reset();
    expect(t).toEqual(IDENTITY);
    expect(t).not.toBe(IDENTITY);
  });

  it("cssTransform renders translate before scale", () => {
    expect(cssTransform({ scale: 2.5, dx: 4, dy: -7 })).toBe("translate(4px, -7px) scale(2.5)");
    expect(cssTransform(IDENTITY)).toBe("translate(0px, 0px) scale(1)");
  });
});
