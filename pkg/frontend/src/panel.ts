/** Detail panel content builders.
 *
 * Endpoint panels are built from the daemon's own /nodes/{id} response so
 * the panel can never drift from the API (every metadata key appears,
 * nothing is invented).  Network panels are derived locally from the
 * snapshot, since networks carry their label and attachment count there.
 */

import { NodeDoc } from "./api.js";
import { GraphModel } from "./model.js";

export interface PanelEdge {
  network: number;
  ip: string | null;
  mac: string | null;
}

export interface PanelData {
  title: string;
  kind: "endpoint" | "network";
  fields: [string, string][];
  edges: PanelEdge[];
  /** Pre-filled prune command for the node's network; the bridge from
   * "found something" to the operator's next action. */
  trimCommand: string | null;
}

export function endpointPanel(doc: NodeDoc): PanelData {
  const fields = Object.keys(doc.D)
    .sort()
    .map((key): [string, string] => [key, doc.D[key]]);
  const edges = doc.Edges.map((edge) => ({
    network: edge.N,
    ip: edge.D["ip"] ?? null,
    mac: edge.D["mac"] ?? null,
  }));
  return {
    title: doc.D["hostname"] ?? `node${doc.NID}`,
    kind: "endpoint",
    fields,
    edges,
    trimCommand: edges.length > 0 ? `netcarta trim --mark network=${edges[0].network}` : null,
  };
}

export function networkPanel(model: GraphModel, id: number): PanelData | null {
  const node = model.nodes.find((n) => n.id === id && n.kind === "network");
  if (!node) return null;
  const attached = new Set(
    model.links.filter((l) => l.target === id).map((l) => l.source),
  ).size;
  return {
    title: node.label,
    kind: "network",
    fields: [
      ["attached endpoints", String(attached)],
      ["subnet", node.label],
    ],
    edges: [],
    trimCommand: `netcarta trim --mark network=${id}`,
  };
}

export function renderPanel(container: HTMLElement, panel: PanelData | null): void {
  container.innerHTML = "";
  if (panel === null) {
    container.classList.add("hidden");
    return;
  }
  container.classList.remove("hidden");

  const title = document.createElement("h2");
  title.textContent = panel.title;
  container.appendChild(title);

  const table = document.createElement("table");
  for (const [key, value] of panel.fields) {
    const row = table.insertRow();
    row.insertCell().textContent = key;
    row.insertCell().textContent = value;
  }
  container.appendChild(table);

  if (panel.edges.length > 0) {
    const heading = document.createElement("h3");
    heading.textContent = "interfaces";
    container.appendChild(heading);
    const edges = document.createElement("table");
    for (const edge of panel.edges) {
      const row = edges.insertRow();
      row.insertCell().textContent = `network-${edge.network}`;
      row.insertCell().textContent = edge.ip ?? "";
      row.insertCell().textContent = edge.mac ?? "";
    }
    container.appendChild(edges);
  }

  if (panel.trimCommand) {
    const command = document.createElement("code");
    command.textContent = panel.trimCommand;
    const copy = document.createElement("button");
    copy.textContent = "copy";
    copy.addEventListener("click", () => {
      void navigator.clipboard.writeText(panel.trimCommand!);
    });
    const row = document.createElement("div");
    row.className = "trim-command";
    row.appendChild(command);
    row.appendChild(copy);
    container.appendChild(row);
  }
}
