#!/usr/bin/env node
// Overlay solver trace CSVs into one SVG figure.
//
// Usage:
//   node dist/src/cli.js --out fig.svg run1.csv run2.csv:label ...
// Options:
//   --column NAME   y column (default consensus_error_l1)
//   --linear        linear y axis (default log scale)
//   --width N --height N
//   --title TEXT

import { writeFileSync } from "fs";
import { basename } from "path";
import { loadTrace, SchemaError, Trace } from "./csv";
import { renderSvg } from "./plot";

interface Args {
  out: string;
  column: string;
  logScale: boolean;
  width?: number;
  height?: number;
  title?: string;
  inputs: Array<{ path: string; label: string }>;
}

export function parseArgs(argv: string[]): Args {
  const args: Args = { out: "plot.svg", column: "consensus_error_l1", logScale: true, inputs: [] };
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--out") args.out = argv[++i];
    else if (arg === "--column") args.column = argv[++i];
    else if (arg === "--linear") args.logScale = false;
    else if (arg === "--width") args.width = Number(argv[++i]);
    else if (arg === "--height") args.height = Number(argv[++i]);
    else if (arg === "--title") args.title = argv[++i];
    else if (arg.startsWith("--")) throw new Error(`unknown option ${arg}`);
    else {
      const split = arg.lastIndexOf(":");
      // windows-style drive letters are not a concern here; a colon marks a label
      if (split > 1) {
        args.inputs.push({ path: arg.slice(0, split), label: arg.slice(split + 1) });
      } else {
        args.inputs.push({ path: arg, label: basename(arg).replace(/\.csv$/, "") });
      }
    }
  }
  return args;
}

export function main(argv: string[]): number {
  let args: Args;
  try {
    args = parseArgs(argv);
    const traces: Trace[] = args.inputs.map(({ path, label }) => loadTrace(path, label));
    const svg = renderSvg({
      traces,
      yColumn: args.column,
      logScale: args.logScale,
      width: args.width,
      height: args.height,
      title: args.title,
    });
    writeFileSync(args.out, svg);
    console.log(`wrote ${args.out} (${traces.length} curve${traces.length === 1 ? "" : "s"})`);
    return 0;
  } catch (err) {
    if (err instanceof SchemaError || err instanceof Error) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    throw err;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
