/**
 * Annotator bootstrap: volume browser, slice scroller, click-to-prompt,
 * and side-by-side prompt comparison against the live service.
 */

import { ApiError, Client, type PredictResponse } from "./api.js";
import { diceAgreement, unionMask } from "./compare.js";
import { clampIndex, sliceToVoxel, type Axis, type Shape3 } from "./geometry.js";
import { drawOverlays, drawPromptMarker, drawSlice, SCALE } from "./render.js";
import { ViewState } from "./state.js";
import { instanceColor } from "./colors.js";

const client = new Client("");
const state = new ViewState();

const el = {
  volumeSelect: document.getElementById("volume-select") as HTMLSelectElement,
  axisButtons: Array.from(document.querySelectorAll<HTMLButtonElement>("[data-axis]")),
  slider: document.getElementById("slice-slider") as HTMLInputElement,
  sliceLabel: document.getElementById("slice-label") as HTMLSpanElement,
  canvas: document.getElementById("view") as HTMLCanvasElement,
  compareCanvas: document.getElementById("compare-view") as HTMLCanvasElement,
  comparePanel: document.getElementById("compare-panel") as HTMLDivElement,
  agreement: document.getElementById("agreement") as HTMLSpanElement,
  instances: document.getElementById("instance-list") as HTMLUListElement,
  history: document.getElementById("history-list") as HTMLUListElement,
  opacity: document.getElementById("opacity") as HTMLInputElement,
  status: document.getElementById("status") as HTMLDivElement,
  banner: document.getElementById("banner") as HTMLDivElement,
};

let pendingRequest = 0; // later clicks supersede earlier in-flight predicts

function showBanner(message: string): void {
  el.banner.textContent = message;
  el.banner.classList.remove("hidden");
  setTimeout(() => el.banner.classList.add("hidden"), 4000);
}

function setStatus(message: string): void {
  el.status.textContent = message;
}

async function redraw(): Promise<void> {
  if (!state.volume) return;
  const ctx = el.canvas.getContext("2d")!;
  const payload = await client.slice(state.volume.id, state.axis, state.index);
  drawSlice(ctx, payload);
  const entry = state.activeEntry;
  if (entry) {
    drawOverlays(
      ctx,
      entry.prediction.instances,
      state.overlayVisible,
      state.volume.shape,
      state.axis,
      state.index,
      state.opacity,
    );
    drawPromptMarker(ctx, entry.point, state.axis, state.index);
  }
  await redrawCompare();
}

async function redrawCompare(): Promise<void> {
  const compare = state.compareEntry;
  const active = state.activeEntry;
  if (!compare || !active || !state.volume) {
    el.comparePanel.classList.add("hidden");
    return;
  }
  el.comparePanel.classList.remove("hidden");
  const ctx = el.compareCanvas.getContext("2d")!;
  const payload = await client.slice(state.volume.id, state.axis, state.index);
  drawSlice(ctx, payload);
  drawOverlays(
    ctx,
    compare.prediction.instances,
    compare.prediction.instances.map(() => true),
    state.volume.shape,
    state.axis,
    state.index,
    state.opacity,
  );
  drawPromptMarker(ctx, compare.point, state.axis, state.index);

  const voxels = state.volume.shape[0] * state.volume.shape[1] * state.volume.shape[2];
  const agreement = diceAgreement(
    unionMask(active.prediction.instances, voxels),
    unionMask(compare.prediction.instances, voxels),
  );
  el.agreement.textContent = agreement.toFixed(2);
}

function renderInstanceList(prediction: PredictResponse): void {
  el.instances.innerHTML = "";
  prediction.instances.forEach((inst, idx) => {
    const item = document.createElement("li");
    const [r, g, b] = instanceColor(idx);
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.background = `rgb(${r}, ${g}, ${b})`;
    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    toggle.checked = state.overlayVisible[idx];
    toggle.addEventListener("change", () => {
      state.overlayVisible[idx] = toggle.checked;
      void redraw();
    });
    item.append(toggle, swatch, ` instance ${idx + 1} — score ${inst.score.toFixed(2)}`);
    el.instances.appendChild(item);
  });
}

function renderHistory(): void {
  el.history.innerHTML = "";
  state.history.forEach((entry, idx) => {
    const item = document.createElement("li");
    const label = document.createElement("span");
    label.textContent = `${entry.label} (${entry.prediction.instances.length} inst)`;
    if (idx === state.active) item.classList.add("active");
    label.addEventListener("click", () => {
      state.active = idx;
      state.overlayVisible = state.history[idx].prediction.instances.map(() => true);
      renderInstanceList(state.history[idx].prediction);
      renderHistory();
      void redraw();
    });
    const compareBtn = document.createElement("button");
    compareBtn.textContent = idx === state.compareWith ? "comparing" : "compare";
    compareBtn.addEventListener("click", () => {
      state.compareWith = state.compareWith === idx ? -1 : idx;
      renderHistory();
      void redraw();
    });
    item.append(label, compareBtn);
    el.history.appendChild(item);
  });
}

async function handleClick(event: MouseEvent): Promise<void> {
  if (!state.volume) return;
  const rect = el.canvas.getBoundingClientRect();
  const col = Math.floor(((event.clientX - rect.left) / rect.width) * (el.canvas.width / SCALE));
  const row = Math.floor(((event.clientY - rect.top) / rect.height) * (el.canvas.height / SCALE));
  const voxel = sliceToVoxel(state.axis, state.index, row, col) as Shape3;
  const requestId = ++pendingRequest;
  setStatus(`predicting at (${voxel.join(", ")})…`);
  try {
    const prediction = await client.predict(state.volume.id, voxel);
    if (requestId !== pendingRequest) return; // superseded by a newer click
    state.addPrediction(voxel, prediction);
    renderInstanceList(prediction);
    renderHistory();
    setStatus(`${prediction.instances.length} instance(s)`);
    await redraw();
  } catch (err) {
    if (err instanceof ApiError && err.status === 422) {
      showBanner("prompt out of bounds");
    } else {
      showBanner(`prediction failed: ${err}`);
    }
    setStatus("");
  }
}

function bindControls(): void {
  el.volumeSelect.addEventListener("change", () => void loadVolume(el.volumeSelect.value));
  el.axisButtons.forEach((button) =>
    button.addEventListener("click", () => {
      state.setAxis(Number(button.dataset.axis) as Axis);
      el.axisButtons.forEach((b) => b.classList.toggle("active", b === button));
      syncSlider();
      void redraw();
    }),
  );
  el.slider.addEventListener("input", () => {
    state.setIndex(Number(el.slider.value));
    syncSlider();
    void redraw();
  });
  el.opacity.addEventListener("input", () => {
    state.opacity = Number(el.opacity.value) / 100;
    void redraw();
  });
  el.canvas.addEventListener("click", (event) => void handleClick(event));
}

function syncSlider(): void {
  el.slider.max = String(Math.max(state.extent - 1, 0));
  el.slider.value = String(clampIndex(state.index, state.extent));
  el.sliceLabel.textContent = `${state.index} / ${state.extent - 1}`;
}

async function loadVolume(id: string): Promise<void> {
  const volumes = await client.volumes();
  const info = volumes.find((v) => v.id === id);
  if (!info) {
    showBanner(`volume ${id} not found`);
    return;
  }
  state.setVolume(info);
  el.instances.innerHTML = "";
  el.history.innerHTML = "";
  syncSlider();
  setStatus(`loaded ${id}: shape ${info.shape.join("×")}, ${info.n_instances} ground-truth instance(s)`);
  await redraw();
}

async function boot(): Promise<void> {
  try {
    const volumes = await client.volumes();
    el.volumeSelect.innerHTML = volumes
      .map((v) => `<option value="${v.id}">${v.id} (${v.n_instances} inst)</option>`)
      .join("");
    bindControls();
    if (volumes.length) await loadVolume(volumes[0].id);
  } catch (err) {
    showBanner(`cannot reach service: ${err}`);
  }
}

void boot();
