/** View model: one immutable-ish structure per displayed generation.
 *
 * A model is rebuilt from every snapshot, carrying forward whatever still
 * applies: layout positions of surviving nodes, the selection, the active
 * filter and its highlight set.  Anything referencing a node that vanished
 * is dropped, so downstream code never dereferences a stale id.
 */

import { GraphLink, GraphNode, GraphSnapshot } from "./api.js";

export interface Position {
  x: number;
  y: number;
}

export interface GraphModel {
  nodes: GraphNode[];
  links: GraphLink[];
  positions: Map<number, Position>;
  selection: number | null;
  activeFilter: string | null;
  highlights: Set<number>;
  generation: number;
  /** True when networks were collapsed to meta-nodes for legibility. */
  collapsed: boolean;
}

/** Above this many rendered nodes, each network collapses to one
 * meta-node with an attached-endpoint badge so the canvas stays legible. */
export const COLLAPSE_THRESHOLD = 2000;

export function emptyModel(): GraphModel {
  return {
    nodes: [],
    links: [],
    positions: new Map(),
    selection: null,
    activeFilter: null,
    highlights: new Set(),
    generation: 0,
    collapsed: false,
  };
}

export function buildModel(snapshot: GraphSnapshot, previous?: GraphModel): GraphModel {
  const collapsed = snapshot.nodes.length > COLLAPSE_THRESHOLD;
  const { nodes, links } = collapsed ? collapseNetworks(snapshot) : snapshot;

  const ids = new Set(nodes.map((n) => n.id));
  const positions = new Map<number, Position>();
  if (previous) {
    for (const [id, pos] of previous.positions) {
      if (ids.has(id)) positions.set(id, pos);
    }
  }
  for (const node of nodes) {
    if (!positions.has(node.id)) {
      positions.set(node.id, seedPosition(node.id));
    }
  }

  const highlights = new Set<number>();
  if (previous) {
    for (const id of previous.highlights) {
      if (ids.has(id)) highlights.add(id);
    }
  }

  return {
    nodes,
    links,
    positions,
    selection: previous && previous.selection !== null && ids.has(previous.selection)
      ? previous.selection
      : null,
    activeFilter: previous ? previous.activeFilter : null,
    highlights,
    generation: snapshot.generation,
    collapsed,
  };
}

/** Deterministic first placement: nodes appear on a spiral keyed by id, so
 * reloading the same experiment always starts from the same picture. */
export function seedPosition(id: number): Position {
  const angle = id * 2.399963; // golden angle keeps neighbors apart
  const radius = 40 + 14 * Math.sqrt(id);
  return { x: Math.cos(angle) * radius, y: Math.sin(angle) * radius };
}

function collapseNetworks(snapshot: GraphSnapshot): {
  nodes: GraphNode[];
  links: GraphLink[];
} {
  const attached = new Map<number, number>();
  const byEndpoint = new Map<number, number[]>();
  for (const link of snapshot.links) {
    attached.set(link.target, (attached.get(link.target) ?? 0) + 1);
    const nets = byEndpoint.get(link.source) ?? [];
    nets.push(link.target);
    byEndpoint.set(link.source, nets);
  }

  const nodes: GraphNode[] = snapshot.nodes
    .filter((n) => n.kind === "network")
    .map((n) => ({
      id: n.id,
      kind: "network" as const,
      label: `${n.label} (${attached.get(n.id) ?? 0})`,
    }));

  // A multi-homed endpoint (a router, usually) is the only thing that ties
  // two networks together, so it becomes a meta-link.
  const seen = new Set<string>();
  const links: GraphLink[] = [];
  for (const nets of byEndpoint.values()) {
    const distinct = [...new Set(nets)].sort((a, b) => a - b);
    for (let i = 0; i < distinct.length; i++) {
      for (let j = i + 1; j < distinct.length; j++) {
        const key = `${distinct[i]}-${distinct[j]}`;
        if (!seen.has(key)) {
          seen.add(key);
          links.push({ source: distinct[i], target: distinct[j] });
        }
      }
    }
  }
  return { nodes, links };
}

/** Mirror of the daemon's query grammar, checked before any fetch so a
 * typo gives an inline message instead of a round trip. */
export function validateQuery(query: string): string | null {
  const trimmed = query.trim();
  if (!trimmed.includes("=")) {
    return "expected key=value, edge.key=value, or network=<id>";
  }
  const key = trimmed.slice(0, trimmed.indexOf("="));
  if (key.length === 0) {
    return "expected key=value, edge.key=value, or network=<id>";
  }
  if (key === "network") {
    const value = trimmed.slice(trimmed.indexOf("=") + 1);
    if (!/^\d+$/.test(value)) return "network takes a numeric id";
  }
  if (key.startsWith("edge.") && key.length === "edge.".length) {
    return "expected key=value, edge.key=value, or network=<id>";
  }
  return null;
}

export function setHighlights(model: GraphModel, query: string, matchIds: number[]): GraphModel {
  const ids = new Set(model.nodes.map((n) => n.id));
  return {
    ...model,
    activeFilter: query,
    highlights: new Set(matchIds.filter((id) => ids.has(id))),
  };
}

export function clearFilter(model: GraphModel): GraphModel {
  return { ...model, activeFilter: null, highlights: new Set() };
}

export function selectNode(model: GraphModel, id: number | null): GraphModel {
  const exists = id !== null && model.nodes.some((n) => n.id === id);
  return { ...model, selection: exists ? id : null };
}
