/**
 * Canvas box editing and the box-to-constraint mapping.
 *
 * Dragging a box pins its four normalized location features to a 10% band
 * around the canvas value; the output must match POST /canvas/constraints
 * bit for bit (the fixture tests enforce it), so the arithmetic below
 * mirrors the server expression by expression.
 */

import type { ConstraintJson, ConstraintSetJson } from "./types.js";

export interface CanvasBox {
  objectIndex: number;
  left: number;
  top: number;
  right: number;
  bottom: number;
}

export interface CanvasState {
  boxes: CanvasBox[];
  activeIndex: number | null;
  mode: "idle" | "drag" | "resize";
}

const CANVAS_BAND = 0.1;
const PER_OBJECT_BLOCK = 19;

// offsets of left/I.width, right/I.width, top/I.height, bottom/I.height
// inside each per-object descriptor block
const FEATURE_OFFSETS: Array<[string, number]> = [
  ["left/I.width", 12],
  ["right/I.width", 13],
  ["top/I.height", 14],
  ["bottom/I.height", 15],
];

export function clampBox(box: CanvasBox): CanvasBox {
  const clamp01 = (v: number) => Math.min(Math.max(v, 0.0), 1.0);
  const l = clamp01(box.left);
  const t = clamp01(box.top);
  const r = clamp01(box.right);
  const b = clamp01(box.bottom);
  return {
    objectIndex: box.objectIndex,
    left: l,
    top: t,
    right: Math.min(Math.max(r, l), 1.0),
    bottom: Math.min(Math.max(b, t), 1.0),
  };
}

export function boxEditToConstraints(boxes: CanvasBox[]): ConstraintSetJson {
  if (boxes.length === 0) throw new Error("at least one canvas box is required");
  const clamped = boxes.map(clampBox);
  const indices = clamped.map((b) => b.objectIndex);
  if (new Set(indices).size !== indices.length) {
    throw new Error(`duplicate object indices: ${indices.sort().join(", ")}`);
  }
  const arity = Math.max(...indices) + 1;
  if (arity > 3) throw new Error("at most three objects");
  const constraints: ConstraintJson[] = [];
  const ordered = [...clamped].sort((a, b) => a.objectIndex - b.objectIndex);
  for (const box of ordered) {
    const values = [box.left, box.right, box.top, box.bottom];
    for (let k = 0; k < FEATURE_OFFSETS.length; k++) {
      const [suffix, offset] = FEATURE_OFFSETS[k];
      const value = values[k];
      const f = PER_OBJECT_BLOCK * box.objectIndex + offset;
      const name = `O${box.objectIndex + 1}.${suffix}`;
      const lo = Math.min((1.0 - CANVAS_BAND) * value, (1.0 + CANVAS_BAND) * value);
      const hi = Math.max((1.0 - CANVAS_BAND) * value, (1.0 + CANVAS_BAND) * value);
      constraints.push({ f, name, theta: lo, sign: 1 });
      constraints.push({ f, name, theta: hi, sign: -1 });
    }
  }
  return { arity, provenance: "canvas", constraints };
}

/** Chip identity for canvas-derived constraints: used to drop a deleted
 * box's eight chips without touching manual edits on the same features. */
export function canvasFeatureIndices(objectIndex: number): number[] {
  return FEATURE_OFFSETS.map(([, offset]) => PER_OBJECT_BLOCK * objectIndex + offset);
}

export type ResizeHandle = "nw" | "ne" | "sw" | "se" | null;

/** Hit test in canvas fractions; corner handles win over the interior. */
export function hitTest(
  box: CanvasBox,
  x: number,
  y: number,
  handleRadius = 0.02,
): { hit: boolean; handle: ResizeHandle } {
  const corners: Array<[ResizeHandle, number, number]> = [
    ["nw", box.left, box.top],
    ["ne", box.right, box.top],
    ["sw", box.left, box.bottom],
    ["se", box.right, box.bottom],
  ];
  for (const [handle, cx, cy] of corners) {
    if (Math.abs(x - cx) <= handleRadius && Math.abs(y - cy) <= handleRadius) {
      return { hit: true, handle };
    }
  }
  const inside = x >= box.left && x <= box.right && y >= box.top && y <= box.bottom;
  return { hit: inside, handle: null };
}

export function moveBox(box: CanvasBox, dx: number, dy: number): CanvasBox {
  const width = box.right - box.left;
  const height = box.bottom - box.top;
  const left = Math.min(Math.max(box.left + dx, 0), 1 - width);
  const top = Math.min(Math.max(box.top + dy, 0), 1 - height);
  return { ...box, left, top, right: left + width, bottom: top + height };
}

export function resizeBox(box: CanvasBox, handle: ResizeHandle, x: number, y: number): CanvasBox {
  const next = { ...box };
  if (handle === "nw" || handle === "sw") next.left = Math.min(x, box.right - 0.01);
  if (handle === "ne" || handle === "se") next.right = Math.max(x, box.left + 0.01);
  if (handle === "nw" || handle === "ne") next.top = Math.min(y, box.bottom - 0.01);
  if (handle === "sw" || handle === "se") next.bottom = Math.max(y, box.top + 0.01);
  return clampBox(next);
}
