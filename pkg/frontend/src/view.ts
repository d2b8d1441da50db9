/**
 * Zoom and pan state for one image view, applied as a CSS transform.
 * Pure data in, CSS string out; the DOM layer never mutates these.
 */

export interface ViewTransform {
  scale: number;
  dx: number;
  dy: number;
}

export const MIN_SCALE = 0.25;
export const MAX_SCALE = 8;

export const IDENTITY: ViewTransform = { scale: 1, dx: 0, dy: 0 };

export function zoom(t: ViewTransform, factor: number): ViewTransform {
  const scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, t.scale * factor));
  return { ...t, scale };
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { ...t, dx: t.dx + dx, dy: t.dy + dy };
}

export function reset(): ViewTransform {
  return { ...IDENTITY };
}

export function cssTransform(t: ViewTransform): string {
  return `translate(${t.dx}px, ${t.dy}px) scale(${t.scale})`;
}
