/** Strict CSV reading for the report layer's documented schemas. */

export interface Table {
  columns: string[];
  rows: Record<string, string>[];
}

/** Parse simple comma-separated text (the report layer never quotes fields). */
export function parseCsv(text: string): Table {
  const lines = text.split(/\r?\n/).filter((l) => l.length > 0);
  if (lines.length === 0) {
    throw new Error('CSV is empty');
  }
  const columns = lines[0].split(',');
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(',');
    if (cells.length !== columns.length) {
      throw new Error(`row ${i + 2}: expected ${columns.length} cells, found ${cells.length}`);
    }
    const row: Record<string, string> = {};
    columns.forEach((c, j) => (row[c] = cells[j]));
    return row;
  });
  return { columns, rows };
}

/** Fail loudly with the exact column diff when a schema does not match. */
export function requireColumns(table: Table, expected: string[], context: string): void {
  const have = new Set(table.columns);
  const missing = expected.filter((c) => !have.has(c));
  const extra = table.columns.filter((c) => !expected.includes(c));
  if (missing.length > 0) {
    throw new Error(
      `${context}: schema mismatch; missing columns [${missing.join(', ')}]` +
        (extra.length > 0 ? `, unexpected columns [${extra.join(', ')}]` : ''),
    );
  }
}

export function num(row: Record<string, string>, column: string): number {
  const v = Number(row[column]);
  if (!Number.isFinite(v)) {
    throw new Error(`non-numeric value '${row[column]}' in column ${column}`);
  }
  return v;
}
