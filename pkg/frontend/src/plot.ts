import { SchemaError, Trace, column } from "./csv";

export interface PlotSpec {
  traces: Trace[];
  yColumn?: string;
  logScale?: boolean;
  width?: number;
  height?: number;
  title?: string;
}

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

interface Series {
  label: string;
  points: Array<[number, number]>;
}

function collectSeries(spec: PlotSpec, yColumn: string, log: boolean): Series[] {
  return spec.traces.map((trace) => {
    const xs = column(trace, "iter");
    const ys = column(trace, yColumn);
    const points: Array<[number, number]> = [];
    for (let i = 0; i < xs.length; i++) {
      const y = ys[i];
      if (!Number.isFinite(y)) continue;
      if (log && y <= 0) continue; // log scale cannot place nonpositive values
      points.push([xs[i], y]);
    }
    return { label: trace.label, points };
  });
}

function logTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.ceil(Math.log10(lo) - 1e-9); Math.pow(10, e) <= hi * (1 + 1e-9); e++) {
    ticks.push(Math.pow(10, e));
  }
  return ticks;
}

function linearTicks(lo: number, hi: number, count = 6): number[] {
  const span = hi - lo || 1;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const scaled = span / count / step;
  const unit = scaled >= 5 ? 10 * step : scaled >= 2 ? 5 * step : 2 * step;
  const ticks: number[] = [];
  for (let v = Math.ceil(lo / unit) * unit; v <= hi + 1e-12; v += unit) {
    ticks.push(v);
  }
  return ticks;
}

function formatTick(value: number, log: boolean): string {
  if (log) {
    const exponent = Math.round(Math.log10(value));
    return `1e${exponent}`;
  }
  return Math.abs(value) >= 1000 || (value !== 0 && Math.abs(value) < 0.01)
    ? value.toExponential(0)
    : String(Number(value.toFixed(6)));
}

const esc = (text: string) =>
  text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");

/** Build one overlay figure as an SVG document string. */
export function renderSvg(spec: PlotSpec): string {
  if (!spec.traces || spec.traces.length === 0) {
    throw new SchemaError("plot spec lists no traces");
  }
  const yColumn = spec.yColumn ?? "consensus_error_l1";
  const log = spec.logScale ?? true;
  const width = spec.width ?? 760;
  const height = spec.height ?? 480;
  const margin = { left: 72, right: 24, top: spec.title ? 40 : 20, bottom: 48 };

  const series = collectSeries(spec, yColumn, log);
  const drawable = series.filter((s) => s.points.length > 0);
  if (drawable.length === 0) {
    throw new SchemaError(`no drawable points in column '${yColumn}'`);
  }

  let xLo = Infinity, xHi = -Infinity, yLo = Infinity, yHi = -Infinity;
  for (const s of drawable) {
    for (const [x, y] of s.points) {
      xLo = Math.min(xLo, x); xHi = Math.max(xHi, x);
      yLo = Math.min(yLo, y); yHi = Math.max(yHi, y);
    }
  }
  if (xHi === xLo) xHi = xLo + 1;
  if (yHi === yLo) yHi = log ? yLo * 10 : yLo + 1;

  const plotW = width - margin.left - margin.right;
  const plotH = height - margin.top - margin.bottom;
  const px = (x: number) => margin.left + ((x - xLo) / (xHi - xLo)) * plotW;
  const py = (y: number) => {
    const t = log
      ? (Math.log10(y) - Math.log10(yLo)) / (Math.log10(yHi) - Math.log10(yLo))
      : (y - yLo) / (yHi - yLo);
    return margin.top + (1 - t) * plotH;
  };

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}" font-family="sans-serif" font-size="12">`);
  parts.push(`<rect width="${width}" height="${height}" fill="white"/>`);
  if (spec.title) {
    parts.push(`<text x="${width / 2}" y="22" text-anchor="middle" font-size="15">${esc(spec.title)}</text>`);
  }

  // frame and grid
  parts.push(`<rect x="${margin.left}" y="${margin.top}" width="${plotW}" height="${plotH}" ` +
    `fill="none" stroke="#333"/>`);
  const yTicks = log ? logTicks(yLo, yHi) : linearTicks(yLo, yHi);
  for (const tick of yTicks) {
    const y = py(tick);
    parts.push(`<line x1="${margin.left}" y1="${y}" x2="${margin.left + plotW}" y2="${y}" ` +
      `stroke="#ddd" stroke-width="0.7"/>`);
    parts.push(`<text x="${margin.left - 6}" y="${y + 4}" text-anchor="end">${formatTick(tick, log)}</text>`);
  }
  for (const tick of linearTicks(xLo, xHi)) {
    const x = px(tick);
    parts.push(`<line x1="${x}" y1="${margin.top}" x2="${x}" y2="${margin.top + plotH}" ` +
      `stroke="#eee" stroke-width="0.7"/>`);
    parts.push(`<text x="${x}" y="${margin.top + plotH + 16}" text-anchor="middle">${formatTick(tick, false)}</text>`);
  }
  parts.push(`<text x="${margin.left + plotW / 2}" y="${height - 10}" text-anchor="middle">iteration</text>`);
  parts.push(`<text transform="rotate(-90 16 ${margin.top + plotH / 2})" x="16" y="${margin.top + plotH / 2}" ` +
    `text-anchor="middle">${esc(yColumn)}${log ? " (log scale)" : ""}</text>`);

  // curves
  drawable.forEach((s, idx) => {
    const color = PALETTE[idx % PALETTE.length];
    const coords = s.points.map(([x, y]) => `${px(x).toFixed(2)},${py(y).toFixed(2)}`).join(" ");
    parts.push(`<polyline points="${coords}" fill="none" stroke="${color}" stroke-width="1.6"/>`);
  });

  // legend
  const legendX = margin.left + plotW - 180;
  let legendY = margin.top + 14;
  drawable.forEach((s, idx) => {
    const color = PALETTE[idx % PALETTE.length];
    parts.push(`<line x1="${legendX}" y1="${legendY - 4}" x2="${legendX + 26}" y2="${legendY - 4}" ` +
      `stroke="${color}" stroke-width="2"/>`);
    parts.push(`<text x="${legendX + 32}" y="${legendY}">${esc(s.label)}</text>`);
    legendY += 18;
  });

  parts.push("</svg>");
  return parts.join("\n");
}
