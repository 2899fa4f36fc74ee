/** Wire types shared with the HTTP API. Field names match the server JSON. */

export interface ConstraintJson {
  f: number;
  name: string;
  theta: number;
  sign: 1 | -1;
}

export interface ConstraintSetJson {
  arity: number;
  provenance: "manual" | "canvas" | "mining" | "language";
  constraints: ConstraintJson[];
}

export interface RegionEntry {
  region_id: number;
  box: [number, number, number, number] | null;
  score: number;
  norm: number;
}

export interface ComboEntry {
  regions: number[];
  score: number;
  features: number[];
}

export interface PayloadImage {
  image_id: string;
  score: number;
  norms: number[];
  width: number;
  height: number;
  objects: RegionEntry[][];
  combos: ComboEntry[];
}

export interface ShortlistPayload {
  arity: number;
  t: number;
  images: PayloadImage[];
}

export interface FilteredResult {
  image_id: string;
  score: number;
  passes: boolean;
  regions: RegionEntry[];
  features: number[];
}

export interface SearchResponse {
  snapshot_id: string;
  results: unknown[];
  shortlist: ShortlistPayload;
}

export interface MiningRecommendation {
  constraints: ConstraintSetJson;
  representative: { image_id: string; boxes: number[][] };
  cluster_size: number;
  metrics: { precision: number; recall: number; f_value: number };
}

export interface LanguageRecommendation {
  predicate: string;
  likelihood: number;
  constraints: ConstraintSetJson;
}

export interface CatalogEntry {
  index: number;
  name: string;
  unit: string;
}
