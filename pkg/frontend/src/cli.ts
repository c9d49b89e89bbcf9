#!/usr/bin/env node
/**
 * render --traces a.csv,b.csv --labels baseline,mir_rwalk --out fig.png
 *
 * Reads metric-trace CSVs, builds the 4-panel figure (mIoU, BWT,
 * Final-BWT, FWT over time) and writes SVG or rasterized PNG.
 */
import { readFileSync, writeFileSync } from "fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { parseTrace, SchemaError } from "./schema";
import { buildFigure } from "./series";
import { renderFigure } from "./svg";

export interface RenderSpec {
  traces: string[];
  labels: string[];
  out: string;
  smoothing: number;
  width: number;
  height: number;
}

export function render(spec: RenderSpec): void {
  if (spec.traces.length !== spec.labels.length) {
    throw new Error(
      `--traces lists ${spec.traces.length} files but --labels has ${spec.labels.length} entries`);
  }
  const traces = spec.traces.map((path) => parseTrace(readFileSync(path, "utf8")));
  const figure = buildFigure(traces, spec.labels, spec.smoothing);
  const svg = renderFigure(figure, { width: spec.width, height: spec.height });
  if (spec.out.toLowerCase().endsWith(".png")) {
    // lazy import keeps SVG rendering free of the native module
    const { Resvg } = require("@resvg/resvg-js");
    writeFileSync(spec.out, new Resvg(svg).render().asPng());
  } else {
    writeFileSync(spec.out, svg);
  }
}

export function main(argv: string[]): number {
  const args = yargs(argv)
    .option("traces", { type: "string", demandOption: true,
                        describe: "comma-separated trace CSV paths" })
    .option("labels", { type: "string", demandOption: true,
                        describe: "comma-separated legend labels" })
    .option("out", { type: "string", demandOption: true,
                     describe: "output image path (.svg or .png)" })
    .option("smooth", { type: "number", default: 1,
                        describe: "moving-average window (1 = off)" })
    .option("width", { type: "number", default: 1000 })
    .option("height", { type: "number", default: 680 })
    .strict()
    .exitProcess(false)
    .parseSync();

  try {
    render({
      traces: args.traces.split(",").map((s) => s.trim()).filter(Boolean),
      labels: args.labels.split(",").map((s) => s.trim()).filter(Boolean),
      out: args.out,
      smoothing: args.smooth,
      width: args.width,
      height: args.height,
    });
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`schema error in column "${err.column}": ${err.message}`);
    } else {
      console.error(String(err instanceof Error ? err.message : err));
    }
    return 1;
  }
  console.log(`wrote ${args.out}`);
  return 0;
}

if (require.main === module) {
  process.exit(main(hideBin(process.argv)));
}
