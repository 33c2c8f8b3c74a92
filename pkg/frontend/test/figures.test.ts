import { describe, expect, test } from 'vitest';
import { mkdtempSync, readFileSync, writeFileSync } from 'fs';
import { tmpdir } from 'os';
import { join } from 'path';

import { parseCsv, requireColumns } from '../src/csv.js';
import { renderZipper, ZIPPER_COLUMNS } from '../src/zipper.js';
import { renderTost } from '../src/tost.js';
import { renderMetricLines, panelCount } from '../src/lines.js';
import { main, parseArgs } from '../src/cli.js';
import { COLOR_FLAGGED } from '../src/svg.js';

/** Deterministic synthetic zipper CSV: n replicates, every 7th non-covering. */
function zipperCsv(n: number): string {
  const lines = [ZIPPER_COLUMNS.join(',')];
  for (let i = 0; i < n; i++) {
    const width = 0.01 + 0.0005 * ((i * 13) % n); // deliberately unsorted
    const covered = i % 7 === 0 ? 0 : 1;
    const center = covered ? 0.002 : 0.04;
    const lo = center - width / 2;
    const hi = center + width / 2;
    lines.push(
      [i, i, 0.8, 0.8 + center, 0.8 + lo, 0.8 + hi, width, lo, hi, covered].join(','),
    );
  }
  return lines.join('\n') + '\n';
}

function tostCsv(n: number): string {
  const header = 'rank,rep,bias,centered_lo,centered_hi,delta,within';
  const lines = [header];
  for (let i = 0; i < n; i++) {
    const bias = -0.06 + (0.12 * ((i * 17) % n)) / n;
    const within = Math.abs(bias) + 0.02 < 0.05 ? 1 : 0;
    lines.push([i, i, bias, bias - 0.02, bias + 0.02, 0.05, within].join(','));
  }
  return lines.join('\n') + '\n';
}

function linesCsv(xis: number[]): string {
  const header = 'scenario_id,xi,village_fraction,response_rate,method,coverage,mcse';
  const rows = [header];
  for (const xi of xis) {
    for (const f of [0.25, 0.5, 0.75]) {
      for (const r of [0.5, 0.65, 0.8]) {
        for (const m of ['calibrated', 'logistic_regression']) {
          rows.push([`vf${f}_rr${r}_xi${xi}`, xi, f, r, m, 0.95 - 0.1 * (xi - 1), 0.01].join(','));
        }
      }
    }
  }
  return rows.join('\n') + '\n';
}

describe('zipper figure', () => {
  test('renders every interval, sorted by width', () => {
    const svg = renderZipper(parseCsv(zipperCsv(200)));
    const segments = svg.match(/<line[^>]*stroke="#(?:4d4d4d|e66101)"/g) ?? [];
    expect(segments.length).toBe(200);
    // The y coordinates of interval rows must decrease as width grows
    // (thinnest at the bottom of the canvas = larger y first).
    const ys = [...svg.matchAll(/<line x1="[^"]*" y1="([^"]*)".*stroke="#(?:4d4d4d|e66101)"/g)].map(
      (m) => Number(m[1]),
    );
    const sorted = [...ys].sort((a, b) => b - a);
    expect(ys).toEqual(sorted);
  });

  test('non-covering intervals get the highlight color', () => {
    const svg = renderZipper(parseCsv(zipperCsv(70)));
    const flagged = svg.match(new RegExp(`stroke="${COLOR_FLAGGED}"`, 'g')) ?? [];
    expect(flagged.length).toBe(10); // every 7th of 70
  });

  test('no highlights when everything covers', () => {
    const csv = zipperCsv(21).replaceAll(',0\n', ',1\n');
    const svg = renderZipper(parseCsv(csv));
    expect(svg.includes(COLOR_FLAGGED)).toBe(false);
  });

  test('byte-stable across repeated invocations', () => {
    const table = parseCsv(zipperCsv(120));
    expect(renderZipper(table)).toBe(renderZipper(parseCsv(zipperCsv(120))));
  });

  test('schema mismatch names the missing columns', () => {
    const bad = parseCsv('rank,rep\n0,0\n');
    expect(() => renderZipper(bad)).toThrow(/missing columns \[.*ci95_lo/);
  });
});

describe('tost figure', () => {
  test('intervals ordered negative to positive bias', () => {
    const svg = renderTost(parseCsv(tostCsv(90)));
    const xs = [...svg.matchAll(/<line x1="([^"]*)" y1="([^"]*)".*stroke="#(?:4d4d4d|e66101)"/g)];
    expect(xs.length).toBe(90);
    // Ordered by bias: left endpoints ascend as rows rise (y falls).
    const pairs = xs.map((m) => ({ x: Number(m[1]), y: Number(m[2]) }));
    const byRow = [...pairs].sort((a, b) => b.y - a.y);
    const lefts = byRow.map((p) => p.x);
    expect(lefts).toEqual([...lefts].sort((a, b) => a - b));
  });

  test('out-of-tolerance intervals highlighted', () => {
    const svg = renderTost(parseCsv(tostCsv(90)));
    expect(svg.includes(COLOR_FLAGGED)).toBe(true);
    expect(svg.includes('<rect x=')).toBe(true); // tolerance band
  });

  test('byte-stable', () => {
    expect(renderTost(parseCsv(tostCsv(50)))).toBe(renderTost(parseCsv(tostCsv(50))));
  });
});

describe('metric line figures', () => {
  test('one panel per xi in the summary', () => {
    const table = parseCsv(linesCsv([1.0, 1.1, 1.2, 1.3, 1.4, 1.5]));
    expect(panelCount(table)).toBe(6);
    const svg = renderMetricLines(table, { metric: 'coverage' });
    const panels = svg.match(/odds ratio /g) ?? [];
    expect(panels.length).toBe(6);
  });

  test('xi filter narrows the panels', () => {
    const table = parseCsv(linesCsv([1.0, 1.1, 1.5]));
    const svg = renderMetricLines(table, { metric: 'coverage', xiFilter: [1.5] });
    expect((svg.match(/odds ratio /g) ?? []).length).toBe(1);
    expect(svg.includes('odds ratio 1.5')).toBe(true);
  });

  test('missing metric column is a schema error', () => {
    const table = parseCsv(linesCsv([1.0]));
    expect(() => renderMetricLines(table, { metric: 'bias' })).toThrow(/missing columns \[bias\]/);
  });

  test('empty xi filter match is an error', () => {
    const table = parseCsv(linesCsv([1.0]));
    expect(() => renderMetricLines(table, { metric: 'coverage', xiFilter: [9.9] })).toThrow(
      /matches no rows/,
    );
  });

  test('byte-stable', () => {
    const a = renderMetricLines(parseCsv(linesCsv([1.0, 1.3])), { metric: 'coverage' });
    const b = renderMetricLines(parseCsv(linesCsv([1.0, 1.3])), { metric: 'coverage' });
    expect(a).toBe(b);
  });
});

describe('csv parsing', () => {
  test('ragged rows rejected', () => {
    expect(() => parseCsv('a,b\n1\n')).toThrow(/expected 2 cells/);
  });

  test('column requirement reports extras too', () => {
    const t = parseCsv('a,b,c\n1,2,3\n');
    expect(() => requireColumns(t, ['a', 'd'], 'ctx')).toThrow(/missing columns \[d\].*unexpected/);
  });
});

describe('cli', () => {
  test('arg parsing', () => {
    const args = parseArgs(['zipper', '--input', 'x.csv', '--out', 'y.svg', '--xi', '1.5']);
    expect(args.kind).toBe('zipper');
    expect(args.xi).toEqual([1.5]);
    expect(() => parseArgs(['--input'])).toThrow(/usage/);
    expect(() => parseArgs(['zipper'])).toThrow(/--input and --out/);
    expect(() => parseArgs(['zipper', '--bogus', '1'])).toThrow(/unknown flag/);
  });

  test('end-to-end write is byte-stable', () => {
    const dir = mkdtempSync(join(tmpdir(), 'plots-'));
    const input = join(dir, 'zipper.csv');
    writeFileSync(input, zipperCsv(40));
    const out1 = join(dir, 'fig1.svg');
    const out2 = join(dir, 'fig2.svg');
    expect(main(['zipper', '--input', input, '--out', out1])).toBe(0);
    expect(main(['zipper', '--input', input, '--out', out2])).toBe(0);
    expect(readFileSync(out1, 'utf8')).toBe(readFileSync(out2, 'utf8'));
    expect(readFileSync(out1, 'utf8').startsWith('<svg')).toBe(true);
  });

  test('unknown kind fails cleanly', () => {
    const dir = mkdtempSync(join(tmpdir(), 'plots-'));
    const input = join(dir, 'zipper.csv');
    writeFileSync(input, zipperCsv(5));
    expect(main(['sparkline', '--input', input, '--out', join(dir, 'o.svg')])).toBe(1);
  });
});
