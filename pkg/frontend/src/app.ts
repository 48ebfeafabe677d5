/** Browser entry point: binds the controller to the document. */

import { ApiClient } from "./api.js";
import { QueueController } from "./queue.js";
import { renderScreen } from "./render.js";
import { RUN_METHODS, type RunMethod } from "./types.js";

export function mount(root: HTMLElement, client: ApiClient): QueueController {
  const controller = new QueueController(client);

  const toolbar = document.createElement("div");
  toolbar.className = "toolbar";
  const options = RUN_METHODS.map(
    (method) =>
      `<option${method === "kb-levenshtein" ? " selected" : ""}>${method}</option>`,
  ).join("");
  toolbar.innerHTML =
    `<label>municipality ` +
    `<input type="search" data-role="municipality" placeholder="filter"></label>` +
    `<label>method <select data-role="method">${options}</select></label>` +
    `<button data-action="run">run reconciliation</button>` +
    `<button data-action="reload">reload</button>`;

  const screen = document.createElement("div");
  screen.className = "screen";
  root.append(toolbar, screen);

  controller.changed = () => {
    screen.innerHTML = renderScreen(controller);
  };

  toolbar.addEventListener("change", (event) => {
    const target = event.target as HTMLElement;
    if (target.matches("[data-role=municipality]")) {
      void controller.setMunicipality((target as HTMLInputElement).value);
    }
  });

  toolbar.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("[data-action]");
    if (target === null) return;
    const action = target.getAttribute("data-action");
    if (action === "run") {
      const select = toolbar.querySelector("[data-role=method]") as HTMLSelectElement;
      void controller.run(select.value as RunMethod);
    } else if (action === "reload") {
      void controller.load();
    }
  });

  screen.addEventListener("click", (event) => {
    const element = event.target as HTMLElement;
    const actionEl = element.closest("[data-action]");
    if (actionEl !== null) {
      switch (actionEl.getAttribute("data-action")) {
        case "retry":
          void controller.load();
          return;
        case "dismiss":
          controller.dismissToast(Number(actionEl.getAttribute("data-toast-index")));
          return;
        case "accept":
          void controller.accept();
          return;
        case "reject":
          void controller.reject();
          return;
        case "skip":
          void controller.skip();
          return;
      }
    }
    const row = element.closest("li.queue-row[data-index]");
    if (row !== null) {
      controller.select(Number(row.getAttribute("data-index")));
      return;
    }
    const card = element.closest("article.candidate[data-index]");
    if (card !== null) {
      controller.selectCandidate(Number(card.getAttribute("data-index")));
    }
  });

  document.addEventListener("keydown", (event) => {
    const target = event.target as HTMLElement;
    // leave typing in the filter box alone
    if (target.tagName === "INPUT" || target.tagName === "SELECT") return;
    if (controller.handleKey(event.key)) event.preventDefault();
  });

  void controller.load();
  return controller;
}
