/**
 * Session state: the chip set is the single source of truth for filtering.
 *
 * Chips mirror the server's constraint JSON one to one, plus a client-only
 * origin tag so canvas-box deletion can remove exactly the chips that box
 * created. Recommendation selection replaces the whole set atomically and
 * pushes the prior set onto an undo stack.
 */

import { boxEditToConstraints, canvasFeatureIndices, type CanvasBox } from "./canvas.js";
import type { ConstraintSetJson } from "./types.js";

export type ChipOrigin = "manual" | "canvas" | "recommendation";

export interface Chip {
  f: number;
  name: string;
  theta: number;
  sign: 1 | -1;
  origin: ChipOrigin;
  boxIndex?: number;
}

export interface SessionState {
  arity: number;
  chips: Chip[];
  undoStack: Chip[][];
}

export function newSession(arity: number): SessionState {
  return { arity, chips: [], undoStack: [] };
}

/** Chips in wire form; provenance reflects the dominant origin. */
export function chipsToConstraintSet(state: SessionState): ConstraintSetJson {
  const provenance = state.chips.every((c) => c.origin === "canvas") && state.chips.length
    ? "canvas"
    : "manual";
  return {
    arity: state.arity,
    provenance,
    constraints: state.chips.map(({ f, name, theta, sign }) => ({ f, name, theta, sign })),
  };
}

export function addChip(state: SessionState, chip: Chip): SessionState {
  return { ...state, chips: [...state.chips, chip] };
}

export function removeChip(state: SessionState, index: number): SessionState {
  return { ...state, chips: state.chips.filter((_, i) => i !== index) };
}

/** Replace every canvas-origin chip for this box with fresh ones. */
export function syncCanvasChips(state: SessionState, boxes: CanvasBox[]): SessionState {
  const keep = state.chips.filter((c) => c.origin !== "canvas");
  if (boxes.length === 0) return { ...state, chips: keep };
  const derived = boxEditToConstraints(boxes);
  const canvasChips: Chip[] = derived.constraints.map((c) => {
    const boxIndex = Math.floor(c.f / 19);
    return { ...c, origin: "canvas", boxIndex };
  });
  return { ...state, chips: [...keep, ...canvasChips] };
}

/** Deleting a box drops its eight canvas chips and nothing else. */
export function removeBoxChips(state: SessionState, objectIndex: number): SessionState {
  const owned = new Set(canvasFeatureIndices(objectIndex));
  return {
    ...state,
    chips: state.chips.filter((c) => !(c.origin === "canvas" && owned.has(c.f))),
  };
}

/** Atomic replacement with undo; used when a recommendation is selected. */
export function applyRecommendation(
  state: SessionState,
  constraints: ConstraintSetJson,
): SessionState {
  if (constraints.arity !== state.arity) {
    throw new Error(
      `recommendation arity ${constraints.arity} != session arity ${state.arity}`,
    );
  }
  const chips: Chip[] = constraints.constraints.map((c) => ({
    ...c,
    origin: "recommendation",
  }));
  return { ...state, chips, undoStack: [...state.undoStack, state.chips] };
}

export function undo(state: SessionState): SessionState {
  if (state.undoStack.length === 0) return state;
  const previous = state.undoStack[state.undoStack.length - 1];
  return { ...state, chips: previous, undoStack: state.undoStack.slice(0, -1) };
}
