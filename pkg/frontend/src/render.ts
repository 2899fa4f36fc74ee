/** Schematic rendering: results and representatives are drawn as colored
 * boxes on a scaled canvas (there are no pixels in this system, only
 * regions), dimmed when the image failed the active constraints. */

import type { FilteredResult } from "./types.js";

export const OBJECT_COLORS = ["#e4572e", "#17bebb", "#76b041"];

export function drawBoxes(
  canvas: HTMLCanvasElement,
  boxes: Array<[number, number, number, number]>,
  imageWidth: number,
  imageHeight: number,
  dimmed = false,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.globalAlpha = dimmed ? 0.35 : 1.0;
  ctx.fillStyle = "#f6f4ef";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const sx = canvas.width / imageWidth;
  const sy = canvas.height / imageHeight;
  boxes.forEach((box, k) => {
    const [l, t, r, b] = box;
    ctx.strokeStyle = OBJECT_COLORS[k % OBJECT_COLORS.length];
    ctx.lineWidth = 2;
    ctx.strokeRect(l * sx, t * sy, (r - l) * sx, (b - t) * sy);
    ctx.fillStyle = ctx.strokeStyle + "33";
    ctx.fillRect(l * sx, t * sy, (r - l) * sx, (b - t) * sy);
  });
  ctx.globalAlpha = 1.0;
}

export function resultCard(
  result: FilteredResult,
  imageWidth: number,
  imageHeight: number,
): HTMLElement {
  const card = document.createElement("div");
  card.className = "result-card" + (result.passes ? "" : " failing");
  const canvas = document.createElement("canvas");
  canvas.width = 160;
  canvas.height = 120;
  const boxes = result.regions
    .filter((r) => r.box !== null)
    .map((r) => r.box as [number, number, number, number]);
  drawBoxes(canvas, boxes, imageWidth, imageHeight, !result.passes);
  const label = document.createElement("div");
  label.className = "result-label";
  label.textContent = `${result.image_id}  (${result.score.toFixed(3)})`;
  card.append(canvas, label);
  return card;
}
