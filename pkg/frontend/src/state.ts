// Session state machine. All durable state lives on the server; the
// client keeps only what one screen needs. The cursor always sits on the
// first unrated item, the completed count never decreases, and submission
// is blocked until the current clip has been played at least once.

import { isOnGrid } from "./grid.js";
import type { SessionItem } from "./api.js";

export interface UiSessionState {
  token: string;
  items: SessionItem[];
  cursor: number;
  completedCount: number;
  playbackStarted: boolean;
  selectedValue: number | null;
}

export function firstUnratedIndex(items: readonly SessionItem[]): number {
  const index = items.findIndex((item) => !item.rated);
  return index === -1 ? items.length : index;
}

export function initialState(
  token: string,
  items: SessionItem[],
): UiSessionState {
  return {
    token,
    items,
    cursor: firstUnratedIndex(items),
    completedCount: items.filter((item) => item.rated).length,
    playbackStarted: false,
    selectedValue: null,
  };
}

export function currentItem(state: UiSessionState): SessionItem | null {
  return state.cursor < state.items.length
    ? state.items[state.cursor] ?? null
    : null;
}

export function isComplete(state: UiSessionState): boolean {
  return state.completedCount >= state.items.length;
}

export function markPlaybackStarted(state: UiSessionState): UiSessionState {
  return { ...state, playbackStarted: true };
}

export function selectValue(
  state: UiSessionState,
  value: number,
): UiSessionState {
  if (!isOnGrid(value)) {
    return state;
  }
  return { ...state, selectedValue: value };
}

export function canSubmit(state: UiSessionState): boolean {
  return (
    currentItem(state) !== null &&
    state.playbackStarted &&
    state.selectedValue !== null &&
    isOnGrid(state.selectedValue)
  );
}

/** Apply a server-acknowledged rating and move to the next unrated item. */
export function applyAck(
  state: UiSessionState,
  itemId: string,
  value: number,
): UiSessionState {
  const items = state.items.map((item) =>
    item.itemId === itemId ? { ...item, rated: true, value } : item,
  );
  const ratedCount = items.filter((item) => item.rated).length;
  return {
    ...state,
    items,
    cursor: firstUnratedIndex(items),
    completedCount: Math.max(state.completedCount, ratedCount),
    playbackStarted: false,
    selectedValue: null,
  };
}

export function progressPercent(state: UiSessionState): number {
  if (state.items.length === 0) return 100;
  return Math.round((100 * state.completedCount) / state.items.length);
}
