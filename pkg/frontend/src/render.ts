/** Rendering splits in two: planRender() turns a model into plain glyph
 * data (testable without a browser), drawSvg() applies a plan to an SVG
 * element.  Nothing here ever calls back into the network.
 */

import { GraphModel } from "./model.js";

export type OsIcon = "android" | "ios" | "windows" | "macos" | "generic";

export interface NodeGlyph {
  id: number;
  x: number;
  y: number;
  shape: "circle" | "square" | "diamond";
  icon: OsIcon | null;
  label: string;
  highlighted: boolean;
  selected: boolean;
}

export interface LinkGlyph {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface RenderPlan {
  nodes: NodeGlyph[];
  links: LinkGlyph[];
  generation: number;
}

const KNOWN_ICONS: readonly OsIcon[] = ["android", "ios", "windows", "macos"];

export function osIcon(os: string | undefined): OsIcon {
  return (KNOWN_ICONS as readonly string[]).includes(os ?? "")
    ? (os as OsIcon)
    : "generic";
}

export function planRender(model: GraphModel): RenderPlan {
  const nodes: NodeGlyph[] = model.nodes.map((node) => {
    const pos = model.positions.get(node.id) ?? { x: 0, y: 0 };
    return {
      id: node.id,
      x: pos.x,
      y: pos.y,
      shape: node.kind === "network" ? "square" : node.kind === "router" ? "diamond" : "circle",
      icon: node.kind === "network" ? null : osIcon(node.os),
      label: node.label,
      highlighted: model.highlights.has(node.id),
      selected: model.selection === node.id,
    };
  });
  const links: LinkGlyph[] = [];
  for (const link of model.links) {
    const a = model.positions.get(link.source);
    const b = model.positions.get(link.target);
    if (a && b) links.push({ x1: a.x, y1: a.y, x2: b.x, y2: b.y });
  }
  return { nodes, links, generation: model.generation };
}

const SVG_NS = "http://www.w3.org/2000/svg";

// One glyph per OS family; deliberately spartan so they read at 10px.
const ICON_TEXT: Record<OsIcon, string> = {
  android: "\u{1F916}",
  ios: "\u{1F34E}",
  windows: "⊞",
  macos: "⌘",
  generic: "●",
};

export function drawSvg(
  svg: SVGSVGElement,
  plan: RenderPlan,
  onSelect: (id: number) => void,
): void {
  while (svg.firstChild) svg.removeChild(svg.firstChild);

  for (const link of plan.links) {
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(link.x1));
    line.setAttribute("y1", String(link.y1));
    line.setAttribute("x2", String(link.x2));
    line.setAttribute("y2", String(link.y2));
    line.setAttribute("class", "link");
    svg.appendChild(line);
  }

  for (const node of plan.nodes) {
    const group = document.createElementNS(SVG_NS, "g");
    const classes = ["node", node.shape];
    if (node.highlighted) classes.push("highlighted");
    if (node.selected) classes.push("selected");
    group.setAttribute("class", classes.join(" "));
    group.setAttribute("transform", `translate(${node.x},${node.y})`);
    group.setAttribute("data-id", String(node.id));

    const body = document.createElementNS(SVG_NS, node.shape === "circle" ? "circle" : "rect");
    if (node.shape === "circle") {
      body.setAttribute("r", "10");
    } else {
      body.setAttribute("x", "-9");
      body.setAttribute("y", "-9");
      body.setAttribute("width", "18");
      body.setAttribute("height", "18");
      if (node.shape === "diamond") body.setAttribute("transform", "rotate(45)");
    }
    group.appendChild(body);

    if (node.icon) {
      const icon = document.createElementNS(SVG_NS, "text");
      icon.setAttribute("class", "icon");
      icon.setAttribute("text-anchor", "middle");
      icon.setAttribute("dy", "4");
      icon.textContent = ICON_TEXT[node.icon];
      group.appendChild(icon);
    }

    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("class", "label");
    label.setAttribute("text-anchor", "middle");
    label.setAttribute("dy", "24");
    label.textContent = node.label;
    group.appendChild(label);

    group.addEventListener("click", () => onSelect(node.id));
    svg.appendChild(group);
  }
}
