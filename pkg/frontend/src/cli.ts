#!/usr/bin/env node
/** plots <kind> --input <csv> --out <svg> [--xi 1.5 ...] [--title ...] [--scale 2]
 *
 * Kinds: zipper | tost | bias_lines | coverage_lines. Reads a report-layer
 * CSV, writes a deterministic SVG.
 */

import { readFileSync, writeFileSync } from 'fs';
import { parseCsv } from './csv.js';
import { renderMetricLines } from './lines.js';
import { renderTost } from './tost.js';
import { renderZipper } from './zipper.js';

export interface CliArgs {
  kind: string;
  input: string;
  out: string;
  xi: number[];
  title: string;
  scale: number;
}

export function parseArgs(argv: string[]): CliArgs {
  const [kind, ...rest] = argv;
  if (!kind || kind.startsWith('--')) {
    throw new Error('usage: plots <zipper|tost|bias_lines|coverage_lines> --input <csv> --out <svg>');
  }
  const args: CliArgs = { kind, input: '', out: '', xi: [], title: '', scale: 1 };
  for (let i = 0; i < rest.length; i += 2) {
    const flag = rest[i];
    const value = rest[i + 1];
    if (value === undefined) throw new Error(`missing value for ${flag}`);
    switch (flag) {
      case '--input':
        args.input = value;
        break;
      case '--out':
        args.out = value;
        break;
      case '--xi':
        args.xi.push(Number(value));
        break;
      case '--title':
        args.title = value;
        break;
      case '--scale':
        args.scale = Number(value);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.input || !args.out) throw new Error('--input and --out are required');
  if (!Number.isFinite(args.scale) || args.scale <= 0) throw new Error('--scale must be positive');
  return args;
}

export function renderFromArgs(args: CliArgs): string {
  const table = parseCsv(readFileSync(args.input, 'utf8'));
  let svg: string;
  switch (args.kind) {
    case 'zipper':
      svg = renderZipper(table, args.title);
      break;
    case 'tost':
      svg = renderTost(table, args.title);
      break;
    case 'bias_lines':
      svg = renderMetricLines(table, { metric: 'bias', xiFilter: args.xi });
      break;
    case 'coverage_lines':
      svg = renderMetricLines(table, { metric: 'coverage', xiFilter: args.xi });
      break;
    default:
      throw new Error(`unknown figure kind '${args.kind}'`);
  }
  if (args.scale !== 1) {
    svg = svg.replace(
      /width="(\d+)" height="(\d+)"/,
      (_, w, h) => `width="${Number(w) * args.scale}" height="${Number(h) * args.scale}"`,
    );
  }
  return svg;
}

export function main(argv: string[]): number {
  try {
    const args = parseArgs(argv);
    writeFileSync(args.out, renderFromArgs(args), 'utf8');
    console.log(`wrote ${args.out}`);
    return 0;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith('cli.js')) {
  process.exit(main(process.argv.slice(2)));
}
