/**
 * Report view: consistency and mean time per (annotator, mode) plus the
 * speed-up of each proposal mode against the no-proposal baseline.
 *
 * Every number shown comes straight from the report endpoint; the only
 * client-side transformation is decimal formatting, and each cell keeps the
 * raw value in a data attribute.
 */

import { ReportPayload } from './api.js';

export function formatNumber(value: number | null, digits = 4): string {
  if (value === null || value === undefined) return 'n/a';
  return value.toFixed(digits);
}

function cell(doc: Document, text: string, raw?: number | null): HTMLElement {
  const td = doc.createElement('td');
  td.textContent = text;
  if (raw !== undefined && raw !== null) {
    td.dataset.raw = String(raw);
  }
  return td;
}

export function renderReport(
  doc: Document,
  container: HTMLElement,
  payload: ReportPayload,
): void {
  container.innerHTML = '';
  if (!payload.n_records) {
    const empty = doc.createElement('p');
    empty.className = 'placeholder';
    empty.textContent = 'no annotations recorded yet';
    container.appendChild(empty);
    return;
  }

  const table = doc.createElement('table');
  table.className = 'report';
  const head = doc.createElement('tr');
  for (const title of ['annotator', 'mode', 'consistency', 's / image', 'speed-up vs none']) {
    const th = doc.createElement('th');
    th.textContent = title;
    head.appendChild(th);
  }
  table.appendChild(head);

  for (const [annotator, modes] of Object.entries(payload.annotators)) {
    for (const [mode, values] of Object.entries(modes)) {
      const row = doc.createElement('tr');
      row.dataset.annotator = annotator;
      row.dataset.mode = mode;
      row.appendChild(cell(doc, annotator));
      row.appendChild(cell(doc, mode));
      row.appendChild(
        cell(doc, formatNumber(values.consistency), values.consistency),
      );
      row.appendChild(
        cell(doc, formatNumber(values.mean_time_s, 2), values.mean_time_s),
      );
      const speedUp = mode === 'none' ? null : payload.modes[mode]?.speed_up_vs_none ?? null;
      row.appendChild(cell(doc, speedUp === null ? '' : formatNumber(speedUp, 2), speedUp));
      table.appendChild(row);
    }
  }
  container.appendChild(table);

  const summary = doc.createElement('p');
  summary.className = 'report-summary';
  summary.textContent = `${payload.n_records} stored annotations`;
  container.appendChild(summary);
}
