/**
 * DOM wiring: canvas with drag-to-select region, PC thumbnail strip,
 * alpha slider with frame display, marginal-density and convergence
 * charts. All numbers on screen come from store state, which in turn
 * holds service payload values verbatim.
 */

import { ApiClient } from "./api.js";
import { densityChart, convergenceChart } from "./charts.js";
import { grayscaleImage, signedHeatmap } from "./heatmap.js";
import { Rect, UiStore } from "./state.js";

const CHART_BOX = { width: 480, height: 220, padding: 28 };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function drawFrame(canvas: HTMLCanvasElement, frame: Float64Array, shape: number[] | null): void {
  const [h, w] = shape ?? [1, frame.length];
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d")!;
  const img = new ImageData(grayscaleImage(frame, w, h), w, h);
  ctx.putImageData(img, 0, 0);
}

function drawPcThumbnail(canvas: HTMLCanvasElement, vector: Float64Array, shape: number[] | null): void {
  const [h, w] = shape ?? [1, vector.length];
  canvas.width = w;
  canvas.height = h;
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(signedHeatmap(vector, w, h), w, h), 0, 0);
}

export function mountApp(baseUrl: string): UiStore {
  const store = new UiStore(new ApiClient(baseUrl));

  const imageCanvas = el<HTMLCanvasElement>("image-canvas");
  const selectionBox = el<HTMLDivElement>("selection-box");
  const pcList = el<HTMLDivElement>("pc-list");
  const slider = el<HTMLInputElement>("alpha-slider");
  const alphaLabel = el<HTMLSpanElement>("alpha-label");
  const progressBar = el<HTMLProgressElement>("pc-progress");
  const progressLabel = el<HTMLSpanElement>("progress-label");
  const densitySvgPath = el<HTMLElement>("density-path");
  const densityMarker = el<HTMLElement>("density-marker");
  const convergencePath = el<HTMLElement>("convergence-path");
  const annotations = el<HTMLDivElement>("moment-annotations");
  const residualBadge = el<HTMLSpanElement>("residual-badge");
  const sigmaBadge = el<HTMLSpanElement>("sigma-badge");
  const diagnostics = el<HTMLDivElement>("diagnostics");
  const computeButton = el<HTMLButtonElement>("compute-button");

  let drag: { x0: number; y0: number } | null = null;
  let pendingRect: Rect | null = null;

  imageCanvas.addEventListener("mousedown", (ev) => {
    drag = { x0: ev.offsetX, y0: ev.offsetY };
  });
  imageCanvas.addEventListener("mousemove", (ev) => {
    if (!drag) return;
    const rect = normalizeRect(drag.x0, drag.y0, ev.offsetX, ev.offsetY);
    selectionBox.style.display = "block";
    selectionBox.style.left = `${rect.x}px`;
    selectionBox.style.top = `${rect.y}px`;
    selectionBox.style.width = `${rect.w}px`;
    selectionBox.style.height = `${rect.h}px`;
  });
  imageCanvas.addEventListener("mouseup", (ev) => {
    if (!drag) return;
    const rect = normalizeRect(drag.x0, drag.y0, ev.offsetX, ev.offsetY);
    drag = null;
    if (store.validateRegion(rect)) {
      selectionBox.style.display = "none"; // degenerate drags die client-side
      return;
    }
    pendingRect = rect;
  });

  computeButton.addEventListener("click", () => {
    void store.selectRegion(pendingRect);
  });

  slider.addEventListener("input", () => {
    const bound = store.sliderBound();
    const alpha = (Number(slider.value) / 100) * bound;
    void store.slideAlpha(alpha);
  });

  store.subscribe((state) => {
    const running = state.job.status === "running";
    computeButton.disabled = running || !state.session;
    computeButton.title = state.controlsDisabledReason ?? "";
    slider.disabled = running || state.eigenvalues.length === 0;

    progressBar.max = Math.max(state.job.total, 1);
    progressBar.value = state.job.iterationsDone;
    progressLabel.textContent =
      state.job.status === "running"
        ? `${state.job.iterationsDone} / ${state.job.total} iterations`
        : state.job.status;

    if (state.displayedFrame) {
      drawFrame(imageCanvas, state.displayedFrame, state.session?.shape ?? null);
    }
    alphaLabel.textContent = `alpha = ${state.displayedAlpha ?? 0}${state.staleFrame ? " (stale)" : ""}`;

    pcList.replaceChildren();
    state.eigenvalues.forEach((lam, i) => {
      const row = document.createElement("div");
      row.className = "pc-row" + (i === state.activePc ? " active" : "");
      const thumb = document.createElement("canvas");
      const stored = state.pcVectors.get(i);
      if (stored) drawPcThumbnail(thumb, stored.vector, state.session?.shape ?? null);
      const label = document.createElement("span");
      label.textContent = `PC ${i + 1}: ${lam}`; // payload value, not reformatted
      row.append(thumb, label);
      row.addEventListener("click", () => {
        void store.setActivePc(i).then(() => store.showMarginal(i));
      });
      pcList.append(row);
    });

    if (state.density.length >= 2) {
      const mean = state.momentAnnotations?.mean ?? 0;
      const chart = densityChart(state.density, CHART_BOX, mean);
      densitySvgPath.setAttribute("d", chart.path);
      densityMarker.setAttribute("cx", chart.markerX(state.displayedAlpha ?? 0).toFixed(2));
    }
    if (state.convergence.length > 0) {
      convergencePath.setAttribute("d", convergenceChart(state.convergence, CHART_BOX).path);
    }
    if (state.momentAnnotations) {
      const m = state.momentAnnotations;
      annotations.textContent =
        `mu2 = ${m.mu2}, skewness = ${m.skewness}, kurtosis = ${m.kurtosis}`;
    }
    const badge = store.residualBadge();
    residualBadge.className = badge ?? "hidden";
    residualBadge.textContent =
      state.fitResidual === null ? "" : `fit residual ${state.fitResidual}`;
    sigmaBadge.textContent =
      state.sigmaProvenance === "estimated" ? "sigma estimated from residual" : "";
    diagnostics.textContent = state.diagnostics
      ? `${state.diagnostics.message} ${JSON.stringify(state.diagnostics.moments ?? "")}`
      : "";
  });

  return store;
}

function normalizeRect(x0: number, y0: number, x1: number, y1: number): Rect {
  return {
    x: Math.min(x0, x1),
    y: Math.min(y0, y1),
    w: Math.abs(x1 - x0),
    h: Math.abs(y1 - y0),
  };
}
