/** Zipper figure: every replicate's re-centred 95% interval, thinnest at the
 * bottom, widest at the top; intervals that miss zero are highlighted. */

import { Table, num, requireColumns } from './csv.js';
import { COLOR_COVERED, COLOR_FLAGGED, SvgDoc, drawXAxis, linearScale, ticks } from './svg.js';

export const ZIPPER_COLUMNS = [
  'rank',
  'rep',
  'p_true',
  'p_hat',
  'ci95_lo',
  'ci95_hi',
  'width',
  'centered_lo',
  'centered_hi',
  'covered',
];

export function renderZipper(table: Table, title = ''): string {
  requireColumns(table, ZIPPER_COLUMNS, 'zipper input');
  const rows = [...table.rows].sort((a, b) => num(a, 'width') - num(b, 'width'));

  const margin = { left: 55, right: 15, top: title ? 34 : 18, bottom: 38 };
  const plotW = 480;
  const plotH = Math.max(240, Math.min(700, rows.length * 1.4));
  const doc = new SvgDoc(margin.left + plotW + margin.right, margin.top + plotH + margin.bottom);

  const lo = Math.min(0, ...rows.map((r) => num(r, 'centered_lo')));
  const hi = Math.max(0, ...rows.map((r) => num(r, 'centered_hi')));
  const pad = 0.05 * (hi - lo || 1);
  const x = linearScale([lo - pad, hi + pad], [margin.left, margin.left + plotW]);
  const y = linearScale([0, Math.max(rows.length - 1, 1)], [margin.top + plotH, margin.top]);

  if (title) doc.text(margin.left, 16, title, 12);
  doc.line(x(0), margin.top, x(0), margin.top + plotH, '#999999', 1, '4,3');
  rows.forEach((row, i) => {
    const covered = row['covered'] === '1';
    doc.line(
      x(num(row, 'centered_lo')),
      y(i),
      x(num(row, 'centered_hi')),
      y(i),
      covered ? COLOR_COVERED : COLOR_FLAGGED,
      covered ? 0.7 : 1.1,
    );
  });
  drawXAxis(doc, x, margin.top + plotH + 4, ticks(x.domain, 7));
  doc.text(margin.left + plotW / 2, margin.top + plotH + 32, 'estimate - truth (95% CI)', 10, 'middle');
  doc.text(18, margin.top + plotH / 2, 'replicates, thinnest to widest', 10, 'middle', -90);
  return doc.render();
}
