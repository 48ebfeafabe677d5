/** HTML for the whole review screen; pure functions over controller state. */

import { renderCandidateCard } from "./candidateCard.js";
import { escapeHtml, formatShare } from "./format.js";
import { renderMetricsPanel } from "./metricsPanel.js";
import type { LogEntry, QueueController, Toast } from "./queue.js";
import type { ReviewItem } from "./types.js";

export function renderBanner(banner: string | null): string {
  if (banner === null) return "";
  return (
    `<div class="banner" role="alert">service unreachable: ${escapeHtml(banner)} ` +
    `<button data-action="retry">retry</button></div>`
  );
}

export function renderToasts(toasts: Toast[]): string {
  return toasts
    .map(
      (toast, index) =>
        `<div class="toast toast-${toast.kind}">${escapeHtml(toast.message)} ` +
        `<button data-action="dismiss" data-toast-index="${index}">x</button></div>`,
    )
    .join("");
}

export function renderQueueRow(item: ReviewItem, index: number, selected: boolean): string {
  const address = item.serviceAddress;
  const street = address ? `${address.street} ${address.civic}`.trim() : item.service;
  const municipality = address ? address.municipality : item.municipality;
  const classes = [
    "queue-row",
    selected ? "selected" : "",
    item.state === "skipped" ? "skipped" : "",
  ]
    .filter(Boolean)
    .join(" ");
  return (
    `<li class="${classes}" data-item="${escapeHtml(item.id)}" data-index="${index}">` +
    `<span class="street">${escapeHtml(street)}</span>` +
    `<span class="muni">${escapeHtml(municipality)}</span>` +
    `<span class="top-score">${formatShare(item.topScore)}</span>` +
    `</li>`
  );
}

export function renderDetail(controller: QueueController): string {
  const item = controller.selectedItem();
  if (item === null) return `<section class="detail empty"></section>`;
  const address = item.serviceAddress;
  const head = address
    ? `${escapeHtml(address.street)} ${escapeHtml(address.civic)}, ` +
      escapeHtml(address.municipality)
    : escapeHtml(item.service);
  const cards = item.candidates
    .map((cand, index) => renderCandidateCard(cand, index, index === controller.candidateIndex))
    .join("");
  return (
    `<section class="detail">` +
    `<h2>${head}</h2>` +
    `<p class="run-method">queued by ${escapeHtml(item.runMethod)}</p>` +
    `<div class="candidates">${cards}</div>` +
    `<div class="actions">` +
    `<button data-action="accept">accept (a)</button>` +
    `<button data-action="reject">reject (r)</button>` +
    `<button data-action="skip">skip (s)</button>` +
    `</div>` +
    `</section>`
  );
}

export function renderLog(log: LogEntry[]): string {
  if (log.length === 0) return "";
  const rows = log
    .map((entry) => {
      const street = entry.item.serviceAddress
        ? entry.item.serviceAddress.street
        : entry.item.service;
      const mark = entry.committed ? "committed" : "saving";
      return (
        `<li class="log-${entry.action} ${mark}">` +
        `${entry.action}: ${escapeHtml(street)} <em>${mark}</em></li>`
      );
    })
    .join("");
  return `<section class="log"><h3>this session</h3><ul>${rows}</ul></section>`;
}

export function renderScreen(controller: QueueController): string {
  const rows = controller.items
    .map((item, index) => renderQueueRow(item, index, index === controller.selected))
    .join("");
  const list = controller.isEmpty()
    ? `<p class="all-done">all reconciled</p>`
    : `<ul class="queue">${rows}</ul>`;
  return (
    renderBanner(controller.banner) +
    `<div class="toasts">${renderToasts(controller.toasts)}</div>` +
    `<main>` +
    `<section class="left">` +
    `<h2>queue <span data-field="open">${controller.pending}</span> open</h2>` +
    list +
    `</section>` +
    renderDetail(controller) +
    `<aside>${renderMetricsPanel(controller.metrics)}${renderLog(controller.log)}</aside>` +
    `</main>`
  );
}
