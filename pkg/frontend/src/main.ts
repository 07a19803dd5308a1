// DOM bootstrap: file loading, drag interactions, mode switching, export.

import { ApiClient } from "./api.js";
import { AnnotationSession } from "./session.js";
import { drawScene, nearestHandle } from "./render.js";

const serverInput = document.getElementById("server") as HTMLInputElement;
const fileInput = document.getElementById("image-file") as HTMLInputElement;
const gtInput = document.getElementById("gt-file") as HTMLInputElement;
const canvas = document.getElementById("view") as HTMLCanvasElement;
const banner = document.getElementById("banner") as HTMLDivElement;
const retryBtn = document.getElementById("retry") as HTMLButtonElement;
const resetBtn = document.getElementById("reset") as HTMLButtonElement;
const modeBtn = document.getElementById("mode") as HTMLButtonElement;
const exportBtn = document.getElementById("export") as HTMLButtonElement;
const clicksOut = document.getElementById("clicks") as HTMLSpanElement;
const iouOut = document.getElementById("iou") as HTMLSpanElement;

const ctx = canvas.getContext("2d")!;
let session = newSession();
let bitmap: ImageBitmap | null = null;
let lastLoad: (() => Promise<void>) | null = null;

function newSession(): AnnotationSession {
  const s = new AnnotationSession(new ApiClient(serverInput.value));
  s.onChange = render;
  return s;
}

function render(): void {
  const st = session.state;
  banner.hidden = st.error === null;
  banner.querySelector("span")!.textContent = st.error ?? "";
  const clicks =
    st.mode === "manual" ? st.manual.clicks : st.clicks;
  clicksOut.textContent = String(clicks);
  iouOut.textContent = st.iou === null ? "n/a" : st.iou.toFixed(4);
  modeBtn.textContent =
    st.mode === "manual" ? "switch to interactive" : "switch to manual";
  drawScene(ctx, bitmap, st);
}

async function fileToBase64(file: File): Promise<string> {
  const buf = new Uint8Array(await file.arrayBuffer());
  let bin = "";
  buf.forEach((b) => (bin += String.fromCharCode(b)));
  return btoa(bin);
}

async function loadSelected(): Promise<void> {
  const file = fileInput.files?.[0];
  if (!file) return;
  const b64 = await fileToBase64(file);
  bitmap = await createImageBitmap(file);
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  let gt: [number, number][] | undefined;
  const gtFile = gtInput.files?.[0];
  if (gtFile) {
    const ann = JSON.parse(await gtFile.text());
    gt = ann.vertices;
  }
  session = newSession();
  lastLoad = () =>
    session.load(b64, { width: bitmap!.width, height: bitmap!.height }, gt);
  await lastLoad();
}

fileInput.addEventListener("change", () => void loadSelected());
gtInput.addEventListener("change", () => void loadSelected());
retryBtn.addEventListener("click", () => void (lastLoad && lastLoad()));
resetBtn.addEventListener("click", () => void session.reset());
modeBtn.addEventListener("click", () => session.toggleManualMode());

exportBtn.addEventListener("click", () => {
  try {
    const ann = session.exportManualAnnotation(`manual-${Date.now()}`);
    const blob = new Blob([JSON.stringify(ann, null, 2)], {
      type: "application/json",
    });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = `${ann.id}.json`;
    a.click();
    URL.revokeObjectURL(a.href);
  } catch (err) {
    banner.hidden = false;
    banner.querySelector("span")!.textContent = String(err);
  }
});

function canvasPos(ev: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [
    ((ev.clientX - rect.left) * canvas.width) / rect.width,
    ((ev.clientY - rect.top) * canvas.height) / rect.height,
  ];
}

canvas.addEventListener("mousedown", (ev) => {
  const st = session.state;
  if (st.mode === "manual") return;
  const node = nearestHandle(st, canvasPos(ev));
  if (node !== null) session.beginDrag(node);
});

canvas.addEventListener("mousemove", (ev) => {
  if (session.state.drag) session.moveDrag(canvasPos(ev));
});

canvas.addEventListener("mouseup", () => void session.endDrag());

canvas.addEventListener("click", (ev) => {
  if (session.state.mode === "manual") session.manualClick(canvasPos(ev));
});

canvas.addEventListener("dblclick", () => session.manualClose());

render();
