/** Small display helpers shared by the render modules. */

const ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(text: string): string {
  return text.replace(/[&<>"']/g, (ch) => ESCAPES[ch]);
}

/** Three decimals, the same precision the server-side tables print. */
export function formatShare(value: number): string {
  return value.toFixed(3);
}

/** Signed difference between two server-reported figures. */
export function formatDelta(value: number): string {
  const text = value.toFixed(3);
  return value >= 0 ? `+${text}` : text;
}

/** CSS width for a similarity bar; similarities live in [0, 1]. */
export function barWidth(value: number): string {
  const clamped = Math.max(0, Math.min(1, value));
  return `${(clamped * 100).toFixed(1)}%`;
}
