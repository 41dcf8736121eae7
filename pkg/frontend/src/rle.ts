/** Run-length codec matching the service's [start, len, ...] wire format. */

export function decodeRle(runs: number[], size: number): Uint8Array {
  if (runs.length % 2 !== 0) {
    throw new Error("rle must hold (start, length) pairs");
  }
  const mask = new Uint8Array(size);
  let prevEnd = 0;
  for (let i = 0; i < runs.length; i += 2) {
    const start = runs[i];
    const length = runs[i + 1];
    if (length <= 0 || start < prevEnd || start + length > size) {
      throw new Error(`invalid run (start=${start}, len=${length})`);
    }
    mask.fill(1, start, start + length);
    prevEnd = start + length;
  }
  return mask;
}

export function encodeRle(mask: Uint8Array): number[] {
  const runs: number[] = [];
  let start = -1;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] && start < 0) start = i;
    if (!mask[i] && start >= 0) {
      runs.push(start, i - start);
      start = -1;
    }
  }
  if (start >= 0) runs.push(start, mask.length - start);
  return runs;
}
