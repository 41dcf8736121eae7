/**
 * Annotator view state.
 *
 * Prompt history is append-only within a session; every click stores its
 * prediction so any two entries can be A/B compared later.
 */

import type { PredictResponse, VolumeInfo } from "./api.js";
import type { Axis, Shape3 } from "./geometry.js";
import { clampIndex, sliceShape } from "./geometry.js";

export interface HistoryEntry {
  point: Shape3;
  prediction: PredictResponse;
  label: string;
}

export class ViewState {
  volume: VolumeInfo | null = null;
  axis: Axis = 0;
  index = 0;
  history: HistoryEntry[] = [];
  active = -1;
  compareWith = -1;
  overlayVisible: boolean[] = [];
  opacity = 0.45;

  setVolume(volume: VolumeInfo): void {
    this.volume = volume;
    this.axis = 0;
    this.index = 0;
    this.history = [];
    this.active = -1;
    this.compareWith = -1;
    this.overlayVisible = [];
  }

  setAxis(axis: Axis): void {
    this.axis = axis;
    if (this.volume) this.index = clampIndex(this.index, this.volume.shape[axis]);
  }

  setIndex(index: number): void {
    if (this.volume) this.index = clampIndex(index, this.volume.shape[this.axis]);
  }

  get extent(): number {
    return this.volume ? this.volume.shape[this.axis] : 0;
  }

  get planeShape(): [number, number] {
    return this.volume ? sliceShape(this.volume.shape, this.axis) : [0, 0];
  }

  addPrediction(point: Shape3, prediction: PredictResponse): HistoryEntry {
    const entry: HistoryEntry = {
      point,
      prediction,
      label: `#${this.history.length + 1} @ (${point.map((v) => v.toFixed(0)).join(", ")})`,
    };
    this.history.push(entry);
    this.active = this.history.length - 1;
    this.overlayVisible = prediction.instances.map(() => true);
    return entry;
  }

  get activeEntry(): HistoryEntry | null {
    return this.active >= 0 ? this.history[this.active] : null;
  }

  get compareEntry(): HistoryEntry | null {
    return this.compareWith >= 0 ? this.history[this.compareWith] : null;
  }
}
