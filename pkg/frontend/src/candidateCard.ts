/** One ranked toponym candidate as an HTML card.
 *
 * Cards render in the exact order the server ranked them, and the evidence
 * block always shows every similarity metric, whatever method produced the
 * run, so an operator can see where the metrics disagree.
 */

import { barWidth, escapeHtml, formatShare } from "./format.js";
import { METRIC_NAMES, type Candidate } from "./types.js";

export function renderSimilarityBars(candidate: Candidate): string {
  const rows = METRIC_NAMES.map((name) => {
    const value = candidate.similarity[name];
    const width = value === undefined ? "0%" : barWidth(value);
    const label = value === undefined ? "n/a" : formatShare(value);
    return (
      `<div class="sim-row" data-metric="${name}">` +
      `<span class="sim-name">${name}</span>` +
      `<span class="sim-bar"><span class="sim-fill" style="width:${width}"></span></span>` +
      `<span class="sim-value">${label}</span>` +
      `</div>`
    );
  });
  return rows.join("");
}

export function renderCandidateCard(
  candidate: Candidate,
  index: number,
  highlighted: boolean,
): string {
  const names = candidate.alternativeName
    ? `${escapeHtml(candidate.officialName)} ` +
      `<span class="alt-name">(${escapeHtml(candidate.alternativeName)})</span>`
    : escapeHtml(candidate.officialName);
  const civic = candidate.civic
    ? `<span class="civic">civic ${escapeHtml(candidate.civic)}</span>`
    : `<span class="civic civic-none">street only</span>`;
  const classes = highlighted ? "candidate selected" : "candidate";
  return (
    `<article class="${classes}" data-index="${index}">` +
    `<header>` +
    `<span class="rank">#${index + 1}</span> ` +
    `<span class="road-name">${names}</span>` +
    `<span class="badge level-${candidate.level}">${candidate.level}</span>` +
    `</header>` +
    `<div class="facts">` +
    `<span class="municipality">${escapeHtml(candidate.municipality)}</span> ` +
    civic +
    `<span class="score">score ${formatShare(candidate.score)}</span>` +
    `<span class="method">${escapeHtml(candidate.method)}</span>` +
    `</div>` +
    `<div class="evidence">${renderSimilarityBars(candidate)}</div>` +
    `</article>`
  );
}
