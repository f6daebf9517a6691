// The rating scale: 1.0 to 5.0 in half steps, nine values total.
// The server re-validates; this keeps bad values from ever leaving the
// client.

export const RATING_GRID: readonly number[] = Object.freeze(
  Array.from({ length: 9 }, (_, i) => 1.0 + 0.5 * i),
);

export function isOnGrid(value: number): boolean {
  return RATING_GRID.includes(value);
}

export interface GridButton {
  value: number;
  label: string;
  /** Keyboard shortcut: digits 1..9 map onto the grid in order. */
  key: string;
}

export function gridButtons(): GridButton[] {
  return RATING_GRID.map((value, index) => ({
    value,
    label: value.toFixed(1),
    key: String(index + 1),
  }));
}

export function valueForKey(key: string): number | null {
  const index = Number.parseInt(key, 10) - 1;
  if (Number.isNaN(index) || index < 0 || index >= RATING_GRID.length) {
    return null;
  }
  return RATING_GRID[index] ?? null;
}
