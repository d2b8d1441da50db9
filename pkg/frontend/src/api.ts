/**
 * Typed client for the bench review API.
 *
 * Every call carries the annotator's bearer token. Non-2xx responses
 * become ApiError with the HTTP status and the server's detail message,
 * so callers can branch on conflicts (409) versus auth problems (401/403).
 * Images are fetched with the same authenticated transport and returned
 * as data URIs, since <img src> cannot carry an Authorization header.
 */

export type View = "full" | "crop";
export type ItemStatus = "pending" | "promoted" | "rejected";

export interface Counts {
  pending: number;
  promoted: number;
  rejected: number;
}

export interface ItemSummary {
  item_id: string;
  question: string;
  fmt: "mcq" | "open";
  dimension: string;
  status: ItemStatus;
  verdicts: string[];
}

export interface ReviewRecord {
  annotator_id: string;
  valid: boolean;
  difficult: boolean;
  correct: boolean;
  timestamp: number;
}

export interface McqGold {
  letter: string;
  text: string;
}

export interface ItemDetail extends ItemSummary {
  bbox: [number, number, number, number];
  answer: string | McqGold;
  options: string[] | null;
  image_urls: Record<View, string>;
  review: ReviewRecord[];
}

export interface QueuePage {
  items: ItemSummary[];
  page: number;
  page_size: number;
  total: number;
  counts: Counts;
}

export interface Verdict {
  valid: boolean;
  difficult: boolean;
  correct: boolean;
}

export interface PromoteResult {
  promoted: number;
  counts: Counts;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

function toBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ReviewApi {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request(path: string, init: RequestInit = {}): Promise<Response> {
    const headers = new Headers(init.headers);
    headers.set("Authorization", `Bearer ${this.token}`);
    const res = await this.fetchFn(`${this.baseUrl}${path}`, { ...init, headers });
    if (!res.ok) {
      let detail = `${res.status}`;
      try {
        const body = (await res.json()) as { detail?: unknown };
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status text we have
      }
      throw new ApiError(res.status, detail);
    }
    return res;
  }

  async listItems(status: ItemStatus = "pending", page = 1): Promise<QueuePage> {
    const res = await this.request(`/items?status=${status}&page=${page}`);
    return (await res.json()) as QueuePage;
  }

  async getItem(itemId: string): Promise<ItemDetail> {
    const res = await this.request(`/items/${encodeURIComponent(itemId)}`);
    return (await res.json()) as ItemDetail;
  }

  async submitVerdict(itemId: string, verdict: Verdict): Promise<ItemDetail> {
    const res = await this.request(`/items/${encodeURIComponent(itemId)}/verdict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(verdict),
    });
    return (await res.json()) as ItemDetail;
  }

  async promote(): Promise<PromoteResult> {
    const res = await this.request("/promote", { method: "POST" });
    return (await res.json()) as PromoteResult;
  }

  /** Fetch one image view and return it as a data URI. */
  async fetchImage(itemId: string, view: View): Promise<string> {
    const res = await this.request(`/items/${encodeURIComponent(itemId)}/image/${view}`);
    const type = res.headers.get("content-type") ?? "application/octet-stream";
    const bytes = new Uint8Array(await res.arrayBuffer());
    return `data:${type};base64,${toBase64(bytes)}`;
  }
}
