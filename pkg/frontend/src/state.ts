// View state shared by the item views. Submissions always send the
// last-known revision; unsaved edits set the dirty flag, and navigation
// away from a dirty view needs explicit confirmation.

import type { ReviewItem } from "./types.js";

export type Mode = "list-review" | "pair-review";

export interface ViewState {
  item: ReviewItem | null;
  mode: Mode;
  dirty: boolean;
  lastKnownRevision: number;
}

export function initialState(): ViewState {
  return { item: null, mode: "list-review", dirty: false, lastKnownRevision: -1 };
}

/** Pair review is the default for pairwise results, list review otherwise. */
export function defaultMode(item: ReviewItem): Mode {
  return item.verdicts.length > 0 ? "pair-review" : "list-review";
}

export function openItem(_state: ViewState, item: ReviewItem): ViewState {
  return { item, mode: defaultMode(item), dirty: false, lastKnownRevision: item.revision };
}

/** Adopt the server's echo of an item after a successful mutation. */
export function acceptServerItem(state: ViewState, item: ReviewItem): ViewState {
  return { ...state, item, dirty: false, lastKnownRevision: item.revision };
}

export function markDirty(state: ViewState): ViewState {
  return { ...state, dirty: true };
}

/**
 * Whether navigation may proceed. A dirty view asks the user first via the
 * injected confirm function and stays put when they decline.
 */
export function canNavigate(state: ViewState, confirmFn: (msg: string) => boolean): boolean {
  if (!state.dirty) return true;
  return confirmFn("You have unsaved changes. Discard them?");
}
