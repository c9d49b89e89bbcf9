/**
 * Dependency-free SVG renderer for the 2x2 panel figure: linear scales,
 * tick axes, one polyline per series (broken at undefined values),
 * dashed vertical lines at domain-shift zone edges, shared legend.
 */
import { FigureData, Panel, Series } from "./series";

export const PALETTE = ["#2462c2", "#c03434", "#2b8a3e", "#e8860c", "#7048a8", "#666666"];

export interface RenderOptions {
  width?: number;
  height?: number;
}

interface Scale {
  (v: number): number;
}

function linearScale(d0: number, d1: number, r0: number, r1: number): Scale {
  const span = d1 - d0 || 1;
  return (v) => r0 + ((v - d0) / span) * (r1 - r0);
}

function ticks(lo: number, hi: number, count: number): number[] {
  const span = hi - lo || 1;
  const step = Math.pow(10, Math.floor(Math.log10(span / count)));
  const err = span / (count * step);
  const unit = err >= 7.5 ? 10 : err >= 3.5 ? 5 : err >= 1.5 ? 2 : 1;
  const inc = unit * step;
  const start = Math.ceil(lo / inc) * inc;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += inc) {
    out.push(Number(v.toPrecision(12)));
  }
  return out;
}

function fmt(v: number): string {
  return Number(v.toPrecision(4)).toString();
}

function esc(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;").replace(/"/g, "&quot;");
}

function seriesExtent(panel: Panel): [number, number, number, number] {
  let x0 = Infinity, x1 = -Infinity, y0 = Infinity, y1 = -Infinity;
  for (const s of panel.series) {
    for (let i = 0; i < s.x.length; i++) {
      const y = s.y[i];
      if (y === null) continue;
      x0 = Math.min(x0, s.x[i]); x1 = Math.max(x1, s.x[i]);
      y0 = Math.min(y0, y); y1 = Math.max(y1, y);
    }
  }
  if (!Number.isFinite(x0)) {
    return [0, 1, 0, 1];
  }
  const pad = (y1 - y0) * 0.05 || 0.05;
  return [x0, x1, Math.max(0, y0 - pad), y1 + pad];
}

function polylines(s: Series, color: string, sx: Scale, sy: Scale): string {
  const segments: string[][] = [];
  let current: string[] = [];
  for (let i = 0; i < s.x.length; i++) {
    const y = s.y[i];
    if (y === null) {
      if (current.length > 1) segments.push(current);
      current = [];
      continue;
    }
    current.push(`${sx(s.x[i]).toFixed(2)},${sy(y).toFixed(2)}`);
  }
  if (current.length > 1) segments.push(current);
  return segments
    .map((pts) => `<polyline fill="none" stroke="${color}" stroke-width="1.6" points="${pts.join(" ")}"/>`)
    .join("\n");
}

function renderPanel(panel: Panel, ox: number, oy: number, w: number, h: number): string {
  const ml = 46, mr = 12, mt = 26, mb = 30;
  const iw = w - ml - mr, ih = h - mt - mb;
  const [x0, x1, y0, y1] = seriesExtent(panel);
  const sx = linearScale(x0, x1, ox + ml, ox + ml + iw);
  const sy = linearScale(y0, y1, oy + mt + ih, oy + mt);

  const parts: string[] = [];
  parts.push(`<text x="${ox + ml + iw / 2}" y="${oy + 16}" text-anchor="middle" font-size="13" font-weight="bold">${esc(panel.title)}</text>`);
  parts.push(`<rect x="${ox + ml}" y="${oy + mt}" width="${iw}" height="${ih}" fill="none" stroke="#999"/>`);
  for (const t of ticks(y0, y1, 5)) {
    const y = sy(t);
    parts.push(`<line x1="${ox + ml}" y1="${y.toFixed(2)}" x2="${ox + ml + iw}" y2="${y.toFixed(2)}" stroke="#e3e3e3"/>`);
    parts.push(`<text x="${ox + ml - 5}" y="${(y + 3.5).toFixed(2)}" text-anchor="end" font-size="10">${fmt(t)}</text>`);
  }
  for (const t of ticks(x0, x1, 6)) {
    const x = sx(t);
    parts.push(`<line x1="${x.toFixed(2)}" y1="${oy + mt + ih}" x2="${x.toFixed(2)}" y2="${oy + mt + ih + 4}" stroke="#999"/>`);
    parts.push(`<text x="${x.toFixed(2)}" y="${oy + mt + ih + 15}" text-anchor="middle" font-size="10">${fmt(t)}</text>`);
  }
  parts.push(`<text x="${ox + ml + iw / 2}" y="${oy + h - 4}" text-anchor="middle" font-size="10" fill="#444">virtual time (s)</text>`);
  for (const line of panel.shiftLines) {
    if (line < x0 || line > x1) continue;
    const x = sx(line);
    parts.push(`<line x1="${x.toFixed(2)}" y1="${oy + mt}" x2="${x.toFixed(2)}" y2="${oy + mt + ih}" stroke="#b5b5b5" stroke-dasharray="4,3"/>`);
  }
  panel.series.forEach((s, k) => {
    parts.push(polylines(s, PALETTE[k % PALETTE.length], sx, sy));
  });
  return parts.join("\n");
}

export function renderFigure(fig: FigureData, opts: RenderOptions = {}): string {
  const width = opts.width ?? 1000;
  const height = opts.height ?? 680;
  const legendH = 24;
  const pw = width / 2, ph = (height - legendH) / 2;
  const body = fig.panels
    .map((panel, i) => renderPanel(panel, (i % 2) * pw, legendH + Math.floor(i / 2) * ph, pw, ph))
    .join("\n");

  const labels = fig.panels[0]?.series.map((s) => s.label) ?? [];
  let lx = 12;
  const legend = labels
    .map((label, k) => {
      const item =
        `<line x1="${lx}" y1="13" x2="${lx + 22}" y2="13" stroke="${PALETTE[k % PALETTE.length]}" stroke-width="2.5"/>` +
        `<text x="${lx + 27}" y="17" font-size="12">${esc(label)}</text>`;
      lx += 27 + 8 * label.length + 24;
      return item;
    })
    .join("\n");

  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    legend,
    body,
    "</svg>",
  ].join("\n");
}
