/**
 * Client-side constraint filtering over the shortlist payload.
 *
 * This is the exact rule the server applies: per image, the best-scoring
 * region combination that satisfies every constraint wins; images with no
 * passing combination keep their top combination for display and move to
 * the failing group. Running it locally is what makes chip edits instant,
 * and the fixture tests pin it to the server's output id-for-id.
 */

import type {
  ConstraintSetJson,
  FilteredResult,
  PayloadImage,
  ShortlistPayload,
} from "./types.js";

/** Boundary-inclusive conjunction: sign +1 means x[f] >= theta, -1 <=. */
export function satisfiesAll(
  constraints: ConstraintSetJson | null,
  features: number[],
): boolean {
  if (!constraints) return true;
  for (const c of constraints.constraints) {
    const value = features[c.f];
    if (c.sign > 0 ? value < c.theta : value > c.theta) return false;
  }
  return true;
}

function resultFor(image: PayloadImage, comboIndex: number, passes: boolean): FilteredResult {
  const combo = image.combos[comboIndex];
  const regions = combo.regions.map((rid, k) => {
    const entry = image.objects[k].find((e) => e.region_id === rid);
    if (!entry) throw new Error(`region ${rid} missing from payload image ${image.image_id}`);
    return { ...entry };
  });
  return {
    image_id: image.image_id,
    score: image.score,
    passes,
    regions,
    features: combo.features,
  };
}

export function clientFilter(
  payload: ShortlistPayload,
  constraints: ConstraintSetJson | null,
  includeFailing = false,
): FilteredResult[] {
  if (constraints && constraints.arity !== payload.arity) {
    throw new Error(
      `constraint arity ${constraints.arity} != payload arity ${payload.arity}`,
    );
  }
  const passing: FilteredResult[] = [];
  const failing: FilteredResult[] = [];
  for (const image of payload.images) {
    if (image.combos.length === 0) continue;
    if (!constraints || constraints.constraints.length === 0) {
      passing.push(resultFor(image, 0, true));
      continue;
    }
    let chosen = -1;
    for (let i = 0; i < image.combos.length; i++) {
      if (satisfiesAll(constraints, image.combos[i].features)) {
        chosen = i;
        break;
      }
    }
    if (chosen >= 0) {
      passing.push(resultFor(image, chosen, true));
    } else {
      failing.push(resultFor(image, 0, false));
    }
  }
  return includeFailing ? passing.concat(failing) : passing;
}
