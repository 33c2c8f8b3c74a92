/** Deterministic SVG assembly: fixed float formatting, no clocks, no randomness. */

export const COLOR_COVERED = '#4d4d4d';
export const COLOR_FLAGGED = '#e66101'; // highlights non-covering / out-of-tolerance intervals
export const METHOD_COLORS: Record<string, string> = {
  calibrated: '#1f78b4',
  logistic_regression: '#33a02c',
};
export const RATE_DASHES: Record<string, string> = {
  '0.8': '',
  '0.65': '6,3',
  '0.5': '2,3',
};

export function fmt(x: number): string {
  if (!Number.isFinite(x)) {
    throw new Error(`cannot place non-finite coordinate ${x}`);
  }
  const s = x.toFixed(2);
  return s === '-0.00' ? '0.00' : s;
}

export interface Scale {
  (v: number): number;
  domain: [number, number];
}

export function linearScale(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const span = d1 - d0 === 0 ? 1 : d1 - d0;
  const f = ((v: number) => r0 + ((v - d0) / span) * (r1 - r0)) as Scale;
  f.domain = domain;
  return f;
}

/** Round ticks covering the domain, endpoints included. */
export function ticks(domain: [number, number], count: number): number[] {
  const [lo, hi] = domain;
  if (hi === lo) return [lo];
  const rawStep = (hi - lo) / Math.max(count - 1, 1);
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const step = [1, 2, 2.5, 5, 10].map((m) => m * mag).find((s) => (hi - lo) / s <= count) ?? mag * 10;
  const start = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-9; v += step) out.push(Number(v.toPrecision(12)));
  return out;
}

export class SvgDoc {
  private parts: string[] = [];

  constructor(
    readonly width: number,
    readonly height: number,
  ) {}

  add(fragment: string): void {
    this.parts.push(fragment);
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1, dash = ''): void {
    const d = dash ? ` stroke-dasharray="${dash}"` : '';
    this.add(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${width}"${d}/>`,
    );
  }

  circle(cx: number, cy: number, r: number, fill: string): void {
    this.add(`<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${r}" fill="${fill}"/>`);
  }

  text(x: number, y: number, content: string, size = 11, anchor = 'start', rotate = 0): void {
    const transform = rotate ? ` transform="rotate(${rotate} ${fmt(x)} ${fmt(y)})"` : '';
    this.add(
      `<text x="${fmt(x)}" y="${fmt(y)}" font-size="${size}" font-family="Helvetica, Arial, sans-serif" ` +
        `text-anchor="${anchor}"${transform}>${escapeXml(content)}</text>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string, opacity = 1): void {
    this.add(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(w)}" height="${fmt(h)}" ` +
        `fill="${fill}" opacity="${opacity}"/>`,
    );
  }

  render(): string {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${this.width}" height="${this.height}" ` +
      `viewBox="0 0 ${this.width} ${this.height}">\n<rect width="100%" height="100%" fill="white"/>\n` +
      this.parts.join('\n') +
      '\n</svg>\n'
    );
  }
}

export function escapeXml(s: string): string {
  return s.replace(/&/g, '&amp;').replace(/</g, '&lt;').replace(/>/g, '&gt;');
}

/** Left-to-right axis with labels below. */
export function drawXAxis(
  doc: SvgDoc,
  scale: Scale,
  y: number,
  tickValues: number[],
  decimals = 2,
): void {
  doc.line(scale(scale.domain[0]), y, scale(scale.domain[1]), y, '#000000');
  for (const t of tickValues) {
    doc.line(scale(t), y, scale(t), y + 4, '#000000');
    doc.text(scale(t), y + 15, t.toFixed(decimals), 9, 'middle');
  }
}
