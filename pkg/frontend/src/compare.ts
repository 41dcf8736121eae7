/** Client-side agreement scoring between two predictions. */

import type { InstancePayload } from "./api.js";
import { decodeRle } from "./rle.js";

export function unionMask(instances: InstancePayload[], size: number): Uint8Array {
  const union = new Uint8Array(size);
  for (const inst of instances) {
    const mask = decodeRle(inst.rle, size);
    for (let i = 0; i < size; i++) union[i] |= mask[i];
  }
  return union;
}

/** Dice over two binary arrays; both-empty counts as perfect agreement. */
export function diceAgreement(a: Uint8Array, b: Uint8Array): number {
  let inter = 0;
  let total = 0;
  for (let i = 0; i < a.length; i++) {
    inter += a[i] & b[i];
    total += a[i] + b[i];
  }
  return total === 0 ? 1 : (2 * inter) / total;
}
