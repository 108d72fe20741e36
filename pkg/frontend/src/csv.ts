import { readFileSync } from "node:fs";
import { join } from "node:path";

export type Row = Record<string, string>;

export class SchemaError extends Error {}

export interface Dataset {
  columns: string[];
  rows: Row[];
}

export function parseCsv(text: string): Dataset {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new SchemaError("CSV is empty");
  }
  const columns = lines[0].split(",");
  const rows = lines.slice(1).map((line) => {
    const cells = line.split(",");
    const row: Row = {};
    columns.forEach((name, i) => {
      row[name] = cells[i] ?? "";
    });
    return row;
  });
  return { columns, rows };
}

export function requireColumns(data: Dataset, names: string[]): void {
  for (const name of names) {
    if (!data.columns.includes(name)) {
      throw new SchemaError(`missing required column: ${name}`);
    }
  }
}

export function num(row: Row, name: string): number {
  const v = Number(row[name]);
  return v;
}

export interface ExperimentDir {
  manifest: any;
  data: Dataset;
  experiment: string;
}

export function loadExperimentDir(dir: string): ExperimentDir {
  let manifest: any;
  try {
    manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8"));
  } catch (err) {
    throw new SchemaError(`cannot read manifest.json in ${dir}: ${err}`);
  }
  const experiment = manifest?.config?.experiment;
  if (typeof experiment !== "string") {
    throw new SchemaError("manifest.json lacks config.experiment");
  }
  const data = parseCsv(readFileSync(join(dir, "data.csv"), "utf-8"));
  if (data.rows.length === 0) {
    throw new SchemaError("data.csv has no rows");
  }
  return { manifest, data, experiment };
}

/** Distinct values of a column, in first-appearance order. */
export function distinct(rows: Row[], column: string): string[] {
  const seen = new Set<string>();
  const out: string[] = [];
  for (const row of rows) {
    const v = row[column];
    if (!seen.has(v)) {
      seen.add(v);
      out.push(v);
    }
  }
  return out;
}
