/**
 * Browser wiring for the annotation tool: load a scene color image, paint
 * circular suction strokes or place rectangular grasp strokes, adjust the
 * brush with hotkeys, and download the exported mask PNG + grasp JSON.
 * Everything runs client-side; no server is involved.
 */

import { DEFAULT_BRUSH, adjustBrush } from "./brush.js";
import { exportSession } from "./export.js";
import { paintOverlay } from "./raster.js";
import { Brushstroke, BrushState, Session, strokeAngle } from "./types.js";

interface AppState {
  session: Session;
  brush: BrushState;
  drawing: Brushstroke | null;
  background: ImageBitmap | null;
  baseName: string;
}

const state: AppState = {
  session: { width: 640, height: 480, strokes: [] },
  brush: { ...DEFAULT_BRUSH },
  drawing: null,
  background: null,
  baseName: "scene",
};

function canvas(): HTMLCanvasElement {
  return document.getElementById("canvas") as HTMLCanvasElement;
}

function redraw(): void {
  const ctx = canvas().getContext("2d")!;
  ctx.clearRect(0, 0, state.session.width, state.session.height);
  if (state.background) {
    ctx.drawImage(state.background, 0, 0);
  } else {
    ctx.fillStyle = "#333";
    ctx.fillRect(0, 0, state.session.width, state.session.height);
  }
  const overlay = paintOverlay(state.session);
  const image = new ImageData(new Uint8ClampedArray(overlay),
    state.session.width, state.session.height);
  const scratch = document.createElement("canvas");
  scratch.width = state.session.width;
  scratch.height = state.session.height;
  scratch.getContext("2d")!.putImageData(image, 0, 0);
  ctx.drawImage(scratch, 0, 0);
  updateStatus();
}

function updateStatus(): void {
  const status = document.getElementById("status")!;
  const b = state.brush;
  const angleDeg = (strokeAngle({ ...strokeOf({ row: 0, col: 0 }), angleStep: b.angleStep })
    * 180 / Math.PI).toFixed(1);
  status.textContent =
    `${b.kind} brush | diameter ${b.diameter} px | angle ${angleDeg} deg | ` +
    `${b.polarity} | strokes ${state.session.strokes.length} | ` +
    `[ ] size, q/e angle, x polarity, m mode, u undo, s save`;
}

function strokeOf(point: { row: number; col: number }): Brushstroke {
  return {
    kind: state.brush.kind,
    path: [point],
    diameter: state.brush.diameter,
    polarity: state.brush.polarity,
    angleStep: state.brush.angleStep,
  };
}

function pointerPixel(event: MouseEvent): { row: number; col: number } {
  const rect = canvas().getBoundingClientRect();
  return {
    row: Math.round(event.clientY - rect.top),
    col: Math.round(event.clientX - rect.left),
  };
}

function download(name: string, bytes: Uint8Array | string, mime: string): void {
  const blob = typeof bytes === "string"
    ? new Blob([bytes], { type: mime })
    : new Blob([bytes.buffer as ArrayBuffer], { type: mime });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = name;
  link.click();
  URL.revokeObjectURL(link.href);
}

function saveLabels(): void {
  const files = exportSession(state.session);
  download("suction_labels.png", files.maskPng, "image/png");
  download("grasp_labels.json", files.graspJson, "application/json");
}

async function loadImage(file: File): Promise<void> {
  const bitmap = await createImageBitmap(file);
  state.background = bitmap;
  state.session = { width: bitmap.width, height: bitmap.height, strokes: [] };
  state.baseName = file.name.replace(/\.[^.]*$/, "");
  const c = canvas();
  c.width = bitmap.width;
  c.height = bitmap.height;
  redraw();
}

export function initApp(): void {
  const c = canvas();
  c.width = state.session.width;
  c.height = state.session.height;

  c.addEventListener("mousedown", (event) => {
    state.drawing = strokeOf(pointerPixel(event));
    state.session.strokes.push(state.drawing);
    redraw();
  });
  c.addEventListener("mousemove", (event) => {
    if (!state.drawing) return;
    state.drawing.path.push(pointerPixel(event));
    redraw();
  });
  window.addEventListener("mouseup", () => {
    state.drawing = null;
  });

  window.addEventListener("keydown", (event) => {
    if (event.key === "s") {
      saveLabels();
      return;
    }
    if (event.key === "u") {
      state.session.strokes.pop();
      redraw();
      return;
    }
    const next = adjustBrush(state.brush, event.key);
    if (next !== state.brush) {
      state.brush = next;
      redraw();
    }
  });

  const picker = document.getElementById("file") as HTMLInputElement;
  picker.addEventListener("change", () => {
    if (picker.files && picker.files[0]) void loadImage(picker.files[0]);
  });
  redraw();
}

if (typeof document !== "undefined" && document.getElementById("canvas")) {
  initApp();
}
