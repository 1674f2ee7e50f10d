/** Page bootstrap: wire the controller to the static skeleton in
 * index.html.  The daemon URL comes from ?server=, defaulting to the
 * discovery daemon's standard local bind.
 */

import { App, Host } from "./app.js";
import { Client } from "./api.js";
import { renderPanel } from "./panel.js";
import { drawSvg } from "./render.js";

const DEFAULT_SERVER = "http://127.0.0.1:9090";

function element<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id} in page skeleton`);
  return found as T;
}

function main(): void {
  const server = new URLSearchParams(window.location.search).get("server") ?? DEFAULT_SERVER;

  const svg = element<HTMLElement>("graph") as unknown as SVGSVGElement;
  const panel = element<HTMLDivElement>("panel");
  const banner = element<HTMLDivElement>("banner");
  const filterInput = element<HTMLInputElement>("filter");
  const filterError = element<HTMLSpanElement>("filter-error");
  const generation = element<HTMLSpanElement>("generation");

  const host: Host = {
    render(plan) {
      drawSvg(svg, plan, (id) => void app.select(id));
      generation.textContent = `generation ${plan.generation}`;
    },
    showPanel(data) {
      renderPanel(panel, data);
    },
    showFilterError(message) {
      filterError.textContent = message ?? "";
    },
    showBanner(message) {
      banner.textContent = message ?? "";
      banner.classList.toggle("hidden", message === null);
    },
  };

  const app = new App(new Client(server, (url) => fetch(url)), host);

  filterInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void app.applyFilter(filterInput.value);
  });
  element<HTMLButtonElement>("filter-clear").addEventListener("click", () => {
    filterInput.value = "";
    void app.applyFilter("");
  });
  svg.addEventListener("click", (event) => {
    if (event.target === svg) app.clearSelection();
  });

  void app.loop((ms) => new Promise((resolve) => setTimeout(resolve, ms)));
}

window.addEventListener("load", main);
