#!/usr/bin/env node
/**
 * render_figures <experiment-dir> --out <dir>
 *
 * Reads data.csv + manifest.json from an experiment output directory and
 * writes <out>/<experiment>.svg. The figure is rendered fully in memory
 * before anything touches disk, so failures never leave partial files.
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { SchemaError, loadExperimentDir } from "./csv.js";
import { renderExperiment } from "./figures.js";

function parseArgs(argv: string[]): { dir: string; out: string } {
  const positional: string[] = [];
  let out = ".";
  for (let i = 0; i < argv.length; i++) {
    if (argv[i] === "--out") {
      out = argv[++i];
      if (out === undefined) throw new SchemaError("--out needs a value");
    } else {
      positional.push(argv[i]);
    }
  }
  if (positional.length !== 1) {
    throw new SchemaError("usage: render_figures <experiment-dir> --out <dir>");
  }
  return { dir: positional[0], out };
}

export function main(argv: string[]): number {
  let args;
  try {
    args = parseArgs(argv);
    const { experiment, data } = loadExperimentDir(args.dir);
    const svg = renderExperiment(experiment, data);
    mkdirSync(args.out, { recursive: true });
    const path = join(args.out, `${experiment}.svg`);
    writeFileSync(path, svg);
    console.log(`wrote ${path}`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`render_figures: ${err.message}`);
      return 2;
    }
    console.error(`render_figures: ${err}`);
    return 1;
  }
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === new URL(`file://${process.argv[1]}`).href;
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)));
}
