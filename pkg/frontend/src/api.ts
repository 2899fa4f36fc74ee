/** HTTP wrappers. At most one search request is in flight: a newer search
 * aborts the previous one (latest wins), so slow responses never clobber
 * fresh state. Chip edits deliberately never call the server. */

import type {
  CatalogEntry,
  ConstraintSetJson,
  LanguageRecommendation,
  MiningRecommendation,
  SearchResponse,
} from "./types.js";

export class ApiClient {
  private searchController: AbortController | null = null;

  constructor(private readonly baseUrl: string = "") {}

  private async post<T>(path: string, body: unknown, signal?: AbortSignal): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    const payload = await resp.json();
    if (!resp.ok) {
      throw new Error(`${payload.code ?? resp.status}: ${payload.message ?? "request failed"}`);
    }
    return payload as T;
  }

  async search(body: Record<string, unknown>): Promise<SearchResponse> {
    this.searchController?.abort();
    this.searchController = new AbortController();
    return this.post<SearchResponse>("/search", body, this.searchController.signal);
  }

  async catalog(arity: number): Promise<CatalogEntry[]> {
    const resp = await fetch(`${this.baseUrl}/catalog?arity=${arity}`);
    return (await resp.json()) as CatalogEntry[];
  }

  async indexStats(): Promise<Record<string, unknown>> {
    const resp = await fetch(`${this.baseUrl}/index/stats`);
    return (await resp.json()) as Record<string, unknown>;
  }

  async recommendMining(body: Record<string, unknown>): Promise<MiningRecommendation[]> {
    return this.post<MiningRecommendation[]>("/recommend/mining", body);
  }

  async recommendLanguage(category1: string, category2: string, topM: number): Promise<{
    recommendations: LanguageRecommendation[];
    skipped: string[];
  }> {
    return this.post("/recommend/language", {
      category1,
      category2,
      top_m: topM,
    });
  }

  async canvasConstraints(
    boxes: Array<Record<string, number>>,
  ): Promise<ConstraintSetJson> {
    return this.post<ConstraintSetJson>("/canvas/constraints", { boxes });
  }
}
