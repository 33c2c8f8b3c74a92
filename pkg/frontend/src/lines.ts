/** Bias/coverage line figures: one panel per selection odds ratio, village
 * fraction on the x-axis, one series per method x response rate. */

import { Table, num, requireColumns } from './csv.js';
import {
  METHOD_COLORS,
  RATE_DASHES,
  SvgDoc,
  drawXAxis,
  linearScale,
  ticks,
} from './svg.js';

export const LINES_COLUMNS = [
  'scenario_id',
  'xi',
  'village_fraction',
  'response_rate',
  'method',
  // metric column ('bias' or 'coverage') validated separately
  'mcse',
];

export interface LinesOptions {
  metric: 'bias' | 'coverage';
  xiFilter?: number[];
}

function seriesKey(method: string, rate: string): string {
  return `${method} rr=${rate}`;
}

export function renderMetricLines(table: Table, opts: LinesOptions): string {
  requireColumns(table, [...LINES_COLUMNS, opts.metric], `${opts.metric} lines input`);
  let rows = table.rows;
  if (opts.xiFilter && opts.xiFilter.length > 0) {
    const allowed = new Set(opts.xiFilter.map((v) => v.toFixed(6)));
    rows = rows.filter((r) => allowed.has(num(r, 'xi').toFixed(6)));
    if (rows.length === 0) {
      throw new Error(`xi filter [${opts.xiFilter.join(', ')}] matches no rows`);
    }
  }
  const xis = [...new Set(rows.map((r) => num(r, 'xi')))].sort((a, b) => a - b);
  const fractions = [...new Set(rows.map((r) => num(r, 'village_fraction')))].sort((a, b) => a - b);
  const rates = [...new Set(rows.map((r) => r['response_rate']))].sort(
    (a, b) => Number(b) - Number(a),
  );
  const methods = [...new Set(rows.map((r) => r['method']))].sort();

  const values = rows.map((r) => num(r, opts.metric));
  let lo = Math.min(...values);
  let hi = Math.max(...values);
  if (opts.metric === 'bias') {
    lo = Math.min(lo, 0);
    hi = Math.max(hi, 0.005);
  } else {
    hi = Math.max(hi, 1.0);
    lo = Math.min(lo, 0.9);
  }
  const pad = 0.06 * (hi - lo || 1);

  const panelW = 190;
  const panelH = 170;
  const margin = { left: 62, right: 12, top: 34, bottom: 74 };
  const gap = 18;
  const cols = Math.min(xis.length, 3);
  const rowsOfPanels = Math.ceil(xis.length / cols);
  const width = margin.left + cols * panelW + (cols - 1) * gap + margin.right;
  const height = margin.top + rowsOfPanels * panelH + (rowsOfPanels - 1) * gap + margin.bottom;
  const doc = new SvgDoc(width, height);

  doc.text(margin.left, 16, `${opts.metric} by villages sampled and response rate`, 12);

  xis.forEach((xi, p) => {
    const px = margin.left + (p % cols) * (panelW + gap);
    const py = margin.top + Math.floor(p / cols) * (panelH + gap);
    const x = linearScale(
      [fractions[0] - 0.05, fractions[fractions.length - 1] + 0.05],
      [px, px + panelW],
    );
    const y = linearScale([lo - pad, hi + pad], [py + panelH, py]);

    doc.rect(px, py, panelW, panelH, '#fafafa');
    doc.text(px + panelW / 2, py - 4, `odds ratio ${xi}`, 10, 'middle');
    if (opts.metric === 'bias') {
      doc.line(x(x.domain[0]), y(0), x(x.domain[1]), y(0), '#cccccc', 1, '3,3');
    } else {
      doc.line(x(x.domain[0]), y(0.95), x(x.domain[1]), y(0.95), '#cccccc', 1, '3,3');
    }
    for (const method of methods) {
      for (const rate of rates) {
        const pts = fractions
          .map((f) => {
            const row = rows.find(
              (r) =>
                num(r, 'xi') === xi &&
                num(r, 'village_fraction') === f &&
                r['response_rate'] === rate &&
                r['method'] === method,
            );
            return row ? { f, v: num(row, opts.metric) } : null;
          })
          .filter((p): p is { f: number; v: number } => p !== null);
        const color = METHOD_COLORS[method] ?? '#555555';
        const dash = RATE_DASHES[String(Number(rate))] ?? '';
        for (let i = 1; i < pts.length; i++) {
          doc.line(x(pts[i - 1].f), y(pts[i - 1].v), x(pts[i].f), y(pts[i].v), color, 1.2, dash);
        }
        for (const pt of pts) doc.circle(x(pt.f), y(pt.v), 1.8, color);
      }
    }
    drawXAxis(doc, x, py + panelH + 2, fractions, 2);
    // y labels on the leftmost column only
    if (p % cols === 0) {
      for (const t of ticks(y.domain, 5)) {
        doc.text(px - 6, y(t) + 3, t.toFixed(opts.metric === 'bias' ? 3 : 2), 8, 'end');
      }
    }
  });

  // legend
  let lx = margin.left;
  const ly = height - 40;
  for (const method of methods) {
    doc.line(lx, ly, lx + 22, ly, METHOD_COLORS[method] ?? '#555555', 2);
    doc.text(lx + 27, ly + 3, method, 9);
    lx += 27 + 8 * method.length + 24;
  }
  lx = margin.left;
  for (const rate of rates) {
    const dash = RATE_DASHES[String(Number(rate))] ?? '';
    doc.line(lx, ly + 18, lx + 22, ly + 18, '#555555', 1.5, dash);
    doc.text(lx + 27, ly + 21, `response rate ${rate}`, 9);
    lx += 150;
  }
  doc.text(margin.left + (width - margin.left - margin.right) / 2, height - 6, 'fraction of villages sampled', 10, 'middle');
  return doc.render();
}

/** Panel count helper used by tests and the CLI summary line. */
export function panelCount(table: Table, xiFilter?: number[]): number {
  let rows = table.rows;
  if (xiFilter && xiFilter.length > 0) {
    const allowed = new Set(xiFilter.map((v) => v.toFixed(6)));
    rows = rows.filter((r) => allowed.has(num(r, 'xi').toFixed(6)));
  }
  return new Set(rows.map((r) => r['xi'])).size;
}
