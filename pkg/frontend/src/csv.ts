import { readFileSync } from "fs";

export class SchemaError extends Error {}

export interface Trace {
  label: string;
  columns: string[];
  rows: number[][];
}

/** Columns every solver trace carries; extra columns are fine. */
export const REQUIRED_COLUMNS = ["iter", "consensus_error_l1", "energy"];

export function parseTraceCsv(text: string, label: string): Trace {
  const lines = text
    .split(/\r?\n/)
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
  if (lines.length < 2) {
    throw new SchemaError(`${label}: trace needs a header and at least one row`);
  }
  const columns = lines[0].split(",").map((c) => c.trim());
  for (const required of REQUIRED_COLUMNS) {
    if (!columns.includes(required)) {
      throw new SchemaError(`${label}: missing required column '${required}'`);
    }
  }
  const rows: number[][] = [];
  for (const line of lines.slice(1)) {
    const cells = line.split(",");
    if (cells.length !== columns.length) {
      throw new SchemaError(`${label}: row has ${cells.length} cells, header has ${columns.length}`);
    }
    rows.push(cells.map((cell) => (cell === "" ? NaN : Number(cell))));
  }
  return { label, columns, rows };
}

export function loadTrace(path: string, label?: string): Trace {
  return parseTraceCsv(readFileSync(path, "utf8"), label ?? path);
}

export function column(trace: Trace, name: string): number[] {
  const index = trace.columns.indexOf(name);
  if (index < 0) {
    throw new SchemaError(`${trace.label}: no column '${name}'`);
  }
  return trace.rows.map((row) => row[index]);
}
