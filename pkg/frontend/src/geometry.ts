/**
 * Mapping between volume voxels and 2D slice views.
 *
 * Volumes are row-major [D, H, W]. Slicing along axis k removes that
 * axis; the remaining axes keep their order, so slice pixels are
 * (row, col) = remaining dims in volume order. This matches the
 * server's np.take semantics exactly.
 */

export type Shape3 = [number, number, number];
export type Axis = 0 | 1 | 2;

export function sliceShape(shape: Shape3, axis: Axis): [number, number] {
  const rest = shape.filter((_, i) => i !== axis);
  return [rest[0], rest[1]];
}

/** (axis, sliceIndex, row, col) -> [d, h, w] voxel coordinate. */
export function sliceToVoxel(axis: Axis, index: number, row: number, col: number): Shape3 {
  switch (axis) {
    case 0:
      return [index, row, col];
    case 1:
      return [row, index, col];
    default:
      return [row, col, index];
  }
}

/** Inverse of sliceToVoxel: voxel -> (row, col) within the slice plane. */
export function voxelToSlice(axis: Axis, voxel: Shape3): [number, number] {
  const rest = voxel.filter((_, i) => i !== axis);
  return [rest[0], rest[1]];
}

export function flatIndex(voxel: Shape3, shape: Shape3): number {
  const [d, h, w] = voxel;
  return (d * shape[1] + h) * shape[2] + w;
}

/** Pull one 2D plane out of a flat row-major mask. */
export function extractSlice(flat: Uint8Array, shape: Shape3, axis: Axis, index: number): Uint8Array {
  const [rows, cols] = sliceShape(shape, axis);
  const out = new Uint8Array(rows * cols);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const voxel = sliceToVoxel(axis, index, r, c);
      out[r * cols + c] = flat[flatIndex(voxel, shape)];
    }
  }
  return out;
}

export function clampIndex(index: number, extent: number): number {
  return Math.min(Math.max(index, 0), extent - 1);
}
