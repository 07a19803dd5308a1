// DOM-free annotation session state. All committed geometry comes from
// server responses; the only local mutation is the handle being dragged.
// Drag commits issued while a request is in flight are queued latest-wins.

import { ApiClient, ApiError, SessionState } from "./api.js";

export type Point = [number, number];

export interface ImageSize {
  width: number;
  height: number;
}

export interface ManualState {
  points: Point[]; // pixel coordinates
  closed: boolean;
  clicks: number;
}

export interface UiState {
  phase: "empty" | "loading" | "ready" | "error";
  error: string | null;
  sessionId: string | null;
  curve: Point[]; // normalized, committed
  clicks: number;
  iou: number | null;
  nPoints: number;
  curveKind: string;
  imageSize: ImageSize;
  mode: "interactive" | "manual";
  drag: { node: number; pos: Point } | null;
  changed: number[]; // nodes moved by the last correction response
  manual: ManualState;
}

function emptyState(): UiState {
  return {
    phase: "empty",
    error: null,
    sessionId: null,
    curve: [],
    clicks: 0,
    iou: null,
    nPoints: 0,
    curveKind: "",
    imageSize: { width: 0, height: 0 },
    mode: "interactive",
    drag: null,
    changed: [],
    manual: { points: [], closed: false, clicks: 0 },
  };
}

export class AnnotationSession {
  state: UiState = emptyState();
  onChange: (() => void) | null = null;

  private inflight = false;
  private pending: { node: number; pos: Point } | null = null;

  constructor(private api: ApiClient) {}

  private emit() {
    if (this.onChange) this.onChange();
  }

  private applyServer(s: SessionState) {
    const before = this.state.curve;
    const after = s.curve as Point[];
    const changed: number[] = [];
    if (before.length === after.length) {
      for (let i = 0; i < after.length; i++) {
        if (before[i][0] !== after[i][0] || before[i][1] !== after[i][1]) {
          changed.push(i);
        }
      }
    }
    this.state.sessionId = s.session_id;
    this.state.curve = after;
    this.state.clicks = s.clicks;
    this.state.iou = s.iou ?? null;
    this.state.changed = changed;
  }

  async load(imageB64: string, size: ImageSize, gtPolygon?: Point[]): Promise<void> {
    this.state = emptyState();
    this.state.phase = "loading";
    this.state.imageSize = size;
    this.emit();
    try {
      const info = await this.api.modelInfo();
      const created = await this.api.createSession(imageB64, gtPolygon);
      this.state.nPoints = info.n_points;
      this.state.curveKind = info.curve_kind;
      this.applyServer(created);
      this.state.changed = [];
      this.state.phase = "ready";
      this.state.error = null;
    } catch (err) {
      this.state.phase = "error";
      this.state.error = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  beginDrag(node: number): void {
    if (this.state.phase !== "ready" || this.state.mode !== "interactive") return;
    this.state.drag = { node, pos: [...this.state.curve[node]] as Point };
    this.emit();
  }

  moveDrag(posPx: Point): void {
    if (!this.state.drag) return;
    const { width, height } = this.state.imageSize;
    this.state.drag.pos = [posPx[0] / width, posPx[1] / height];
    this.emit();
  }

  // A drop always commits (zero-shift drops still count as clicks).
  async endDrag(): Promise<void> {
    const drag = this.state.drag;
    if (!drag) return;
    this.state.drag = null;
    await this.commitDrag(drag.node, drag.pos);
  }

  async commitDrag(node: number, pos: Point): Promise<void> {
    if (this.inflight) {
      this.pending = { node, pos }; // latest wins
      return;
    }
    this.inflight = true;
    try {
      const sid = this.state.sessionId;
      if (!sid) return;
      const res = await this.api.correct(sid, node, pos);
      this.applyServer(res);
      this.state.error = null;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        // revert: committed state untouched, handle snaps back
        this.state.error = `correction rejected: ${err.message}`;
      } else {
        this.state.error = err instanceof ApiError ? err.message : String(err);
      }
    } finally {
      this.inflight = false;
      this.emit();
    }
    const next = this.pending;
    this.pending = null;
    if (next) await this.commitDrag(next.node, next.pos);
  }

  async reset(): Promise<void> {
    const sid = this.state.sessionId;
    if (!sid) return;
    try {
      this.applyServer(await this.api.reset(sid));
      this.state.changed = [];
      this.state.error = null;
    } catch (err) {
      this.state.error = err instanceof ApiError ? err.message : String(err);
    }
    this.emit();
  }

  async refresh(): Promise<SessionState | null> {
    const sid = this.state.sessionId;
    if (!sid) return null;
    return this.api.getSession(sid);
  }

  // Manual polygon drawing keeps its own click counter; switching modes
  // leaves the interactive session untouched.
  toggleManualMode(): void {
    this.state.mode = this.state.mode === "manual" ? "interactive" : "manual";
    this.state.drag = null;
    this.emit();
  }

  manualClick(posPx: Point): void {
    if (this.state.mode !== "manual" || this.state.manual.closed) return;
    this.state.manual.points.push(posPx);
    this.state.manual.clicks += 1;
    this.emit();
  }

  manualClose(): void {
    if (this.state.mode !== "manual" || this.state.manual.points.length < 3) return;
    this.state.manual.closed = true;
    this.emit();
  }

  manualReset(): void {
    this.state.manual = { points: [], closed: false, clicks: 0 };
    this.emit();
  }

  // Annotation JSON in the dataset schema.
  exportManualAnnotation(id: string): {
    id: string;
    vertices: [number, number][];
    height: number;
    width: number;
  } {
    if (!this.state.manual.closed) {
      throw new Error("close the manual polygon before exporting");
    }
    return {
      id,
      vertices: this.state.manual.points.map((p) => [p[0], p[1]]),
      height: this.state.imageSize.height,
      width: this.state.imageSize.width,
    };
  }
}
