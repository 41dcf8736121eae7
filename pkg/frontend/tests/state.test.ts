import { describe, expect, it } from "vitest";

import type { VolumeInfo } from "../src/api.js";
import { ViewState } from "../src/state.js";

const VOLUME: VolumeInfo = { id: "vol_000001", shape: [32, 32, 32], n_instances: 3 };

function prediction(n: number) {
  return { instances: Array.from({ length: n }, (_, i) => ({ score: 0.8, rle: [i, 1] })) };
}

describe("view state", () => {
  it("clamps slice index when switching axes", () => {
    const state = new ViewState();
    state.setVolume({ ...VOLUME, shape: [8, 32, 32] });
    state.setAxis(1);
    state.setIndex(30);
    expect(state.index).toBe(30);
    state.setAxis(0);
    expect(state.index).toBe(7);
    state.setIndex(-4);
    expect(state.index).toBe(0);
  });

  it("keeps prompt history append-only with the latest active", () => {
    const state = new ViewState();
    state.setVolume(VOLUME);
    state.addPrediction([1, 2, 3], prediction(2));
    state.addPrediction([4, 5, 6], prediction(1));
    expect(state.history.length).toBe(2);
    expect(state.active).toBe(1);
    expect(state.history[0].point).toEqual([1, 2, 3]);
    expect(state.overlayVisible).toEqual([true]);
  });

  it("supports A/B comparison between any two history entries", () => {
    const state = new ViewState();
    state.setVolume(VOLUME);
    state.addPrediction([1, 1, 1], prediction(1));
    state.addPrediction([9, 9, 9], prediction(2));
    state.compareWith = 0;
    expect(state.compareEntry?.point).toEqual([1, 1, 1]);
    expect(state.activeEntry?.point).toEqual([9, 9, 9]);
  });

  it("resets history when the volume changes", () => {
    const state = new ViewState();
    state.setVolume(VOLUME);
    state.addPrediction([1, 1, 1], prediction(1));
    state.setVolume({ ...VOLUME, id: "vol_000002" });
    expect(state.history).toEqual([]);
    expect(state.activeEntry).toBeNull();
  });
});
