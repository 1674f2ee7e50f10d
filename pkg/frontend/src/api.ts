/** Typed client for the discovery daemon's read-only endpoints.
 *
 * The UI consumes exactly three routes: /graph for the render snapshot,
 * /nodes?q= for filter matching, and /nodes/{id} for the detail panel.
 * Everything else the daemon offers is deliberately out of reach; the
 * explorer never mutates the experiment.
 */

export interface GraphNode {
  id: number;
  label: string;
  kind: "endpoint" | "router" | "network";
  os?: string;
}

export interface GraphLink {
  source: number;
  target: number;
}

export interface GraphSnapshot {
  nodes: GraphNode[];
  links: GraphLink[];
  generation: number;
}

export interface NodeDoc {
  NID: number;
  Edges: { N: number; D: Record<string, string> }[];
  D: Record<string, string>;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

/** The slice of fetch() the client needs; tests substitute a fake. */
export type FetchLike = (url: string) => Promise<{
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
  text(): Promise<string>;
}>;

export class Client {
  private readonly base: string;

  constructor(base: string, private readonly fetcher: FetchLike) {
    this.base = base.replace(/\/+$/, "");
  }

  /** One graph snapshot; with `since`, the daemon holds the request open
   * until its generation passes that number (long poll). */
  graph(since?: number): Promise<GraphSnapshot> {
    const suffix = since === undefined ? "" : `?since=${since}`;
    return this.getJson<GraphSnapshot>(`/graph${suffix}`);
  }

  /** Endpoints matching a key=value query, or all of them. */
  nodes(query?: string): Promise<NodeDoc[]> {
    const suffix = query === undefined ? "" : `?q=${encodeURIComponent(query)}`;
    return this.getJson<NodeDoc[]>(`/nodes${suffix}`);
  }

  node(id: number): Promise<NodeDoc> {
    return this.getJson<NodeDoc>(`/nodes/${id}`);
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetcher(this.base + path);
    if (!response.ok) {
      let message = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { error?: string };
        if (body && typeof body.error === "string") message = body.error;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(response.status, message);
    }
    return (await response.json()) as T;
  }
}
