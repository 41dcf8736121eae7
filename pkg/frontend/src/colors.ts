/** Stable per-instance colors: hashing the index keeps colors fixed
 * across re-renders within a session. */

const PALETTE: Array<[number, number, number]> = [
  [251, 146, 60],
  [59, 130, 246],
  [34, 197, 94],
  [168, 85, 247],
  [236, 72, 153],
  [6, 182, 212],
  [245, 158, 11],
  [99, 102, 241],
  [220, 38, 38],
  [16, 185, 129],
];

export function instanceColor(index: number): [number, number, number] {
  // Knuth multiplicative hash keeps neighboring indices visually distinct.
  const hashed = (index * 2654435761) >>> 0;
  return PALETTE[hashed % PALETTE.length];
}
