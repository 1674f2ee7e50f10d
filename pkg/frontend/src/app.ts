/** Controller: owns the model, the poll loop, and every user action.
 *
 * One rendering context: every state change funnels through refresh(),
 * which re-plans and hands the result to the host page.  Network fetches
 * are asynchronous; a snapshot that arrives out of order loses to the
 * newer generation already displayed (latest wins).
 */

import { ApiError, Client, GraphSnapshot } from "./api.js";
import { runLayout } from "./layout.js";
import {
  GraphModel,
  buildModel,
  clearFilter,
  emptyModel,
  selectNode,
  setHighlights,
  validateQuery,
} from "./model.js";
import { PanelData, endpointPanel, networkPanel } from "./panel.js";
import { RenderPlan, planRender } from "./render.js";

export interface Host {
  render(plan: RenderPlan, model: GraphModel): void;
  showPanel(panel: PanelData | null): void;
  showFilterError(message: string | null): void;
  showBanner(message: string | null): void;
}

export const POLL_INTERVAL_MS = 2000;
export const BACKOFF_START_MS = 1000;
export const BACKOFF_CAP_MS = 30_000;

export class App {
  model: GraphModel = emptyModel();
  backoffMs = BACKOFF_START_MS;
  private primed = false;
  private running = false;

  constructor(
    private readonly client: Client,
    private readonly host: Host,
    private readonly layoutIterations = 120,
  ) {}

  /** One poll step; returns the delay before the next one. */
  async tick(): Promise<number> {
    let snapshot: GraphSnapshot;
    try {
      snapshot = await this.client.graph(this.primed ? this.model.generation : undefined);
    } catch {
      this.host.showBanner(`daemon unreachable, retrying in ${this.backoffMs / 1000}s`);
      const wait = this.backoffMs;
      this.backoffMs = Math.min(this.backoffMs * 2, BACKOFF_CAP_MS);
      return wait;
    }
    this.host.showBanner(null);
    this.backoffMs = BACKOFF_START_MS;
    this.accept(snapshot);
    return POLL_INTERVAL_MS;
  }

  /** Install a snapshot unless something newer is already displayed. */
  accept(snapshot: GraphSnapshot): void {
    if (this.primed && snapshot.generation <= this.model.generation) return;
    const hadSelection = this.model.selection;
    this.model = buildModel(snapshot, this.primed ? this.model : undefined);
    this.primed = true;
    this.model.positions = runLayout(this.model, this.layoutIterations);
    if (hadSelection !== null && this.model.selection === null) {
      this.host.showPanel(null);
    }
    this.refresh();
  }

  async loop(sleep: (ms: number) => Promise<void>): Promise<void> {
    this.running = true;
    while (this.running) {
      const delay = await this.tick();
      await sleep(delay);
    }
  }

  stop(): void {
    this.running = false;
  }

  /** Filter box handler: validate locally, then let the daemon decide what
   * matches so highlights always agree with `netcarta trim --mark` scope. */
  async applyFilter(query: string): Promise<void> {
    const trimmed = query.trim();
    if (trimmed === "") {
      this.model = clearFilter(this.model);
      this.host.showFilterError(null);
      this.refresh();
      return;
    }
    const problem = validateQuery(trimmed);
    if (problem !== null) {
      this.host.showFilterError(problem);
      return;
    }
    let docs;
    try {
      docs = await this.client.nodes(trimmed);
    } catch (err) {
      this.host.showFilterError(err instanceof ApiError ? err.message : "daemon unreachable");
      return;
    }
    this.host.showFilterError(null);
    this.model = setHighlights(this.model, trimmed, docs.map((d) => d.NID));
    this.refresh();
  }

  async select(id: number): Promise<void> {
    const node = this.model.nodes.find((n) => n.id === id);
    if (!node) {
      this.host.showPanel(null);
      return;
    }
    this.model = selectNode(this.model, id);
    if (node.kind === "network") {
      this.host.showPanel(networkPanel(this.model, id));
      this.refresh();
      return;
    }
    try {
      this.host.showPanel(endpointPanel(await this.client.node(id)));
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.model = selectNode(this.model, null);
        this.host.showPanel(null);
      }
    }
    this.refresh();
  }

  clearSelection(): void {
    this.model = selectNode(this.model, null);
    this.host.showPanel(null);
    this.refresh();
  }

  private refresh(): void {
    this.host.render(planRender(this.model), this.model);
  }
}
