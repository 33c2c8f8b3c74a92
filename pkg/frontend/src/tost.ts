/** Equivalence figure: re-centred 90% intervals ordered negative-to-positive
 * bias, with the +-delta tolerance band; out-of-tolerance intervals are
 * highlighted. */

import { Table, num, requireColumns } from './csv.js';
import { COLOR_COVERED, COLOR_FLAGGED, SvgDoc, drawXAxis, linearScale, ticks } from './svg.js';

export const TOST_COLUMNS = ['rank', 'rep', 'bias', 'centered_lo', 'centered_hi', 'delta', 'within'];

export function renderTost(table: Table, title = ''): string {
  requireColumns(table, TOST_COLUMNS, 'tost input');
  const rows = [...table.rows].sort((a, b) => num(a, 'bias') - num(b, 'bias'));
  const delta = rows.length > 0 ? num(rows[0], 'delta') : 0.05;

  const margin = { left: 55, right: 15, top: title ? 34 : 18, bottom: 38 };
  const plotW = 480;
  const plotH = Math.max(240, Math.min(700, rows.length * 1.4));
  const doc = new SvgDoc(margin.left + plotW + margin.right, margin.top + plotH + margin.bottom);

  const lo = Math.min(-delta, ...rows.map((r) => num(r, 'centered_lo')));
  const hi = Math.max(delta, ...rows.map((r) => num(r, 'centered_hi')));
  const pad = 0.05 * (hi - lo || 1);
  const x = linearScale([lo - pad, hi + pad], [margin.left, margin.left + plotW]);
  const y = linearScale([0, Math.max(rows.length - 1, 1)], [margin.top + plotH, margin.top]);

  if (title) doc.text(margin.left, 16, title, 12);
  doc.rect(x(-delta), margin.top, x(delta) - x(-delta), plotH, '#f0f0f0');
  doc.line(x(-delta), margin.top, x(-delta), margin.top + plotH, '#999999', 1, '4,3');
  doc.line(x(delta), margin.top, x(delta), margin.top + plotH, '#999999', 1, '4,3');
  doc.line(x(0), margin.top, x(0), margin.top + plotH, '#bbbbbb', 1);
  rows.forEach((row, i) => {
    const within = row['within'] === '1';
    doc.line(
      x(num(row, 'centered_lo')),
      y(i),
      x(num(row, 'centered_hi')),
      y(i),
      within ? COLOR_COVERED : COLOR_FLAGGED,
      within ? 0.7 : 1.1,
    );
  });
  drawXAxis(doc, x, margin.top + plotH + 4, ticks(x.domain, 7));
  doc.text(
    margin.left + plotW / 2,
    margin.top + plotH + 32,
    `estimate - truth (90% CI), tolerance +-${delta}`,
    10,
    'middle',
  );
  doc.text(18, margin.top + plotH / 2, 'replicates, by signed bias', 10, 'middle', -90);
  return doc.render();
}
