/** Canvas rendering: grayscale slices, mask overlays, prompt markers. */

import { decodeBase64, type InstancePayload, type SlicePayload } from "./api.js";
import { extractSlice, voxelToSlice, type Axis, type Shape3 } from "./geometry.js";
import { decodeRle } from "./rle.js";
import { instanceColor } from "./colors.js";

export const SCALE = 12;

export function drawSlice(ctx: CanvasRenderingContext2D, payload: SlicePayload): void {
  const [rows, cols] = payload.shape;
  const pixels = decodeBase64(payload.data);
  const image = new ImageData(cols, rows);
  for (let i = 0; i < rows * cols; i++) {
    const v = pixels[i];
    image.data.set([v, v, v, 255], i * 4);
  }
  const off = new OffscreenCanvas(cols, rows);
  const offCtx = off.getContext("2d")!;
  offCtx.putImageData(image, 0, 0);
  ctx.canvas.width = cols * SCALE;
  ctx.canvas.height = rows * SCALE;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, cols * SCALE, rows * SCALE);
}

export function drawOverlays(
  ctx: CanvasRenderingContext2D,
  instances: InstancePayload[],
  visible: boolean[],
  shape: Shape3,
  axis: Axis,
  index: number,
  opacity: number,
): void {
  const voxels = shape[0] * shape[1] * shape[2];
  instances.forEach((inst, idx) => {
    if (!visible[idx]) return;
    const mask = decodeRle(inst.rle, voxels);
    const plane = extractSlice(mask, shape, axis, index);
    const [rows, cols] = [ctx.canvas.height / SCALE, ctx.canvas.width / SCALE];
    const [r, g, b] = instanceColor(idx);
    ctx.fillStyle = `rgba(${r}, ${g}, ${b}, ${opacity})`;
    for (let row = 0; row < rows; row++) {
      for (let col = 0; col < cols; col++) {
        if (plane[row * cols + col]) {
          ctx.fillRect(col * SCALE, row * SCALE, SCALE, SCALE);
        }
      }
    }
  });
}

export function drawPromptMarker(
  ctx: CanvasRenderingContext2D,
  point: Shape3,
  axis: Axis,
  index: number,
): void {
  if (Math.round(point[axis]) !== index) return;
  const [row, col] = voxelToSlice(axis, point);
  const x = (col + 0.5) * SCALE;
  const y = (row + 0.5) * SCALE;
  ctx.strokeStyle = "#ff3b30";
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(x - 8, y);
  ctx.lineTo(x + 8, y);
  ctx.moveTo(x, y - 8);
  ctx.lineTo(x, y + 8);
  ctx.stroke();
}
