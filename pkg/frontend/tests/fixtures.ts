/** Shared fakes: a canned-route fetch and the small reference experiment
 * (one Linux server attached to one network) used across suites.
 */

import { FetchLike, GraphSnapshot, NodeDoc } from "../src/api.js";

export const BASE = "http://daemon.test";

export function referenceSnapshot(generation = 1): GraphSnapshot {
  return {
    nodes: [
      { id: 1, label: "irc.example.com", kind: "endpoint", os: "linux" },
      { id: 63, label: "10.0.0.0/24", kind: "network" },
    ],
    links: [{ source: 1, target: 63 }],
    generation,
  };
}

export function referenceDoc(): NodeDoc {
  return {
    NID: 1,
    Edges: [{ N: 63, D: { ip: "10.0.0.1/24", mac: "de:ad:be:ef:ca:fe" } }],
    D: { hostname: "irc.example.com", os: "linux", ports: "22,6667" },
  };
}

export class FakeServer {
  calls: string[] = [];
  routes = new Map<string, unknown>();
  down = false;

  fetch: FetchLike = (url: string) => {
    this.calls.push(url);
    if (this.down) {
      return Promise.reject(new TypeError("fetch failed"));
    }
    if (!this.routes.has(url)) {
      return Promise.resolve(response(404, { error: `no such path ${url}` }));
    }
    return Promise.resolve(response(200, this.routes.get(url)));
  };

  route(path: string, body: unknown): void {
    this.routes.set(BASE + path, body);
  }

  callsTo(path: string): number {
    return this.calls.filter((url) => url === BASE + path).length;
  }
}

function response(status: number, body: unknown) {
  return {
    ok: status < 400,
    status,
    json: () => Promise.resolve(body),
    text: () => Promise.resolve(JSON.stringify(body)),
  };
}

/** Tiny deterministic generator for randomized fixtures. */
export function lcg(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state * 1664525 + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
}
