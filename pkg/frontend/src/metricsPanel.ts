/** Live quality panel.
 *
 * Every figure comes straight out of the last GET /metrics response; the
 * panel never recomputes precision, recall or F1 from counts.  The one
 * derived number on screen is the recall delta, a plain difference between
 * the two recalls the server itself reported.
 */

import { formatDelta, formatShare } from "./format.js";
import type { MetricsBlock, MetricsResponse } from "./types.js";

export function recallDelta(metrics: MetricsResponse): number | null {
  if (metrics.beforeManual === null || metrics.current === null) return null;
  return metrics.current.recall - metrics.beforeManual.recall;
}

function renderRow(label: string, block: MetricsBlock | null): string {
  if (block === null) {
    return `<tr><th>${label}</th><td colspan="3" class="empty">no gold standard loaded</td></tr>`;
  }
  return (
    `<tr><th>${label}</th>` +
    `<td data-field="precision">${formatShare(block.precision)}</td>` +
    `<td data-field="recall">${formatShare(block.recall)}</td>` +
    `<td data-field="f1">${formatShare(block.f1)}</td></tr>`
  );
}

export function renderMetricsPanel(metrics: MetricsResponse | null): string {
  if (metrics === null) {
    return `<section class="metrics"><p class="empty">metrics not loaded yet</p></section>`;
  }
  const delta = recallDelta(metrics);
  const deltaText =
    delta === null
      ? ""
      : `<p class="delta">manual review so far: <strong>${formatDelta(delta)}</strong> recall</p>`;
  return (
    `<section class="metrics">` +
    `<table>` +
    `<thead><tr><th></th><th>precision</th><th>recall</th><th>F1</th></tr></thead>` +
    `<tbody>` +
    renderRow("before manual", metrics.beforeManual) +
    renderRow("current", metrics.current) +
    `</tbody></table>` +
    deltaText +
    `<p class="counts">` +
    `<span data-field="pending">${metrics.pending}</span> pending, ` +
    `<span data-field="accepted">${metrics.acceptedLinks}</span> accepted, ` +
    `<span data-field="rejected">${metrics.rejected}</span> rejected, ` +
    `<span data-field="skipped">${metrics.skipped}</span> skipped` +
    `</p>` +
    `</section>`
  );
}
