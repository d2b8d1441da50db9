/**
 * The verdict draft: three independent three-state flags.
 *
 * Every flag starts unset and must be set explicitly before the draft is
 * submittable; there are no defaults to lean on, which forces a
 * deliberate judgment on validity, difficulty, and correctness.
 */

import type { Verdict } from "./api.js";

export const FLAGS = ["valid", "difficult", "correct"] as const;
export type Flag = (typeof FLAGS)[number];

export interface VerdictDraft {
  valid?: boolean;
  difficult?: boolean;
  correct?: boolean;
}

export function emptyDraft(): VerdictDraft {
  return {};
}

export function setFlag(draft: VerdictDraft, flag: Flag, value: boolean): VerdictDraft {
  return { ...draft, [flag]: value };
}

export function clearFlag(draft: VerdictDraft, flag: Flag): VerdictDraft {
  const next = { ...draft };
  delete next[flag];
  return next;
}

/** unset -> yes -> no -> unset; used by the keyboard shortcuts. */
export function cycleFlag(draft: VerdictDraft, flag: Flag): VerdictDraft {
  const current = draft[flag];
  if (current === undefined) return setFlag(draft, flag, true);
  if (current === true) return setFlag(draft, flag, false);
  return clearFlag(draft, flag);
}

export function isComplete(draft: VerdictDraft): boolean {
  return FLAGS.every((flag) => draft[flag] !== undefined);
}

/** The submittable verdict, or null while any flag is still unset. */
export function completed(draft: VerdictDraft): Verdict | null {
  if (!isComplete(draft)) return null;
  return { valid: draft.valid!, difficult: draft.difficult!, correct: draft.correct! };
}
