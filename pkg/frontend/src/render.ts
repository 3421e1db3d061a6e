// Pure HTML renderers for the diagnosis view. Kept DOM-free so they are
// unit-testable; the page layer assigns the returned markup.

import type { EvidenceItem, ScreenResponse } from "./types";

function esc(text: string | number | null): string {
  return String(text ?? "")
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderScoreBars(
  labels: string[], scores: number[], threshold: number, deltas: number[] | null,
): string {
  const rows = labels.map((label, i) => {
    const score = scores[i] ?? 0;
    const width = Math.round(score * 100);
    const decided = score >= threshold ? " decided" : "";
    const delta =
      deltas && Math.abs(deltas[i]) >= 0.0005
        ? `<span class="delta ${deltas[i] > 0 ? "up" : "down"}">` +
          `${deltas[i] > 0 ? "+" : ""}${deltas[i].toFixed(3)}</span>`
        : "";
    return (
      `<div class="score-row${decided}">` +
      `<span class="label">${esc(label)}</span>` +
      `<span class="bar"><span class="fill" style="width:${width}%"></span>` +
      `<span class="threshold" style="left:${threshold * 100}%"></span></span>` +
      `<span class="value">${score.toFixed(3)}</span>${delta}</div>`
    );
  });
  return rows.join("");
}

export function renderDecided(decided: string[], backend: string): string {
  const chips = decided.length
    ? decided.map((d) => `<span class="chip">${esc(d)}</span>`).join("")
    : `<span class="chip none">no subtype at threshold</span>`;
  return `${chips}<span class="backend">${esc(backend)}</span>`;
}

export function renderEvidencePanel(
  evidence: EvidenceItem[], noEvidence: boolean,
): string {
  if (noEvidence || evidence.length === 0) {
    return `<p class="no-evidence">no retrieval context</p>`;
  }
  const header =
    "<tr><th>case</th><th>cosine</th><th>rerank</th>" +
    "<th>MMSE</th><th>CDR</th><th>age</th><th>nWBV</th></tr>";
  const rows = evidence.map(
    (e) =>
      `<tr><td>${esc(e.id)}</td><td>${e.cosine.toFixed(4)}</td>` +
      `<td>${e.rerank_score.toFixed(4)}</td>` +
      `<td>${e.mmse ?? "—"}</td><td>${esc(e.cdr) || "—"}</td>` +
      `<td>${e.age ?? "—"}</td><td>${e.nwbv ?? "—"}</td></tr>`,
  );
  return `<table class="evidence">${header}${rows.join("")}</table>`;
}

export function renderReport(
  labels: string[], response: ScreenResponse, deltas: number[] | null,
): string {
  return (
    `<div class="decided">${renderDecided(response.decided, response.backend)}</div>` +
    `<div class="scores">${renderScoreBars(labels, response.scores, response.threshold, deltas)}</div>` +
    `<h3>Similar cases</h3>` +
    renderEvidencePanel(response.evidence, response.no_evidence)
  );
}

export function renderErrorBanner(
  status: number, code: string, detail: string, retryable: boolean,
): string {
  const retry = retryable ? `<button class="retry">retry</button>` : "";
  const note = status === 503 ? "model loading" : esc(detail);
  return `<div class="banner error-${status}"><b>${esc(code)}</b> ${note}${retry}</div>`;
}
