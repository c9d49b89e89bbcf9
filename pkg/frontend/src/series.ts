/**
 * Turn parsed traces into the data series of the four panels
 * (mIoU, BWT, Final-BWT, FWT over virtual time) plus domain-shift markers.
 */
import { PANEL_METRICS, PanelMetric, TraceRow } from "./schema";

export interface Series {
  label: string;
  x: number[];
  y: (number | null)[];
}

export interface Panel {
  metric: PanelMetric;
  title: string;
  series: Series[];
  /** virtual times of near-shift zone edges, drawn as vertical lines */
  shiftLines: number[];
}

export interface FigureData {
  panels: Panel[];
}

const TITLES: Record<PanelMetric, string> = {
  miou: "mIoU",
  bwt: "BWT",
  final_bwt: "Final BWT",
  fwt: "FWT",
};

export function metricValues(rows: TraceRow[], metric: PanelMetric): (number | null)[] {
  switch (metric) {
    case "miou":
      return rows.map((r) => r.miou);
    case "bwt":
      return rows.map((r) => r.bwt);
    case "fwt":
      return rows.map((r) => r.fwt);
    case "final_bwt":
      return rows.map((r) => r.finalBwt);
  }
}

/**
 * Centered moving average over the defined values; window 1 returns the
 * values untouched. Nulls stay null and do not contribute to neighbors.
 */
export function smooth(values: (number | null)[], window: number): (number | null)[] {
  if (window <= 1) {
    return values.slice();
  }
  const half = Math.floor(window / 2);
  return values.map((v, i) => {
    if (v === null) {
      return null;
    }
    let sum = 0;
    let n = 0;
    for (let j = Math.max(0, i - half); j <= Math.min(values.length - 1, i + half); j++) {
      const u = values[j];
      if (u !== null) {
        sum += u;
        n += 1;
      }
    }
    return sum / n;
  });
}

/** Virtual times where the is_near_shift flag switches on or off. */
export function shiftLines(rows: TraceRow[]): number[] {
  const lines: number[] = [];
  for (let i = 1; i < rows.length; i++) {
    if (rows[i].isNearShift !== rows[i - 1].isNearShift) {
      lines.push(rows[i].tVirtual);
    }
  }
  return lines;
}

export function buildFigure(traces: TraceRow[][], labels: string[], smoothing = 1): FigureData {
  if (traces.length !== labels.length) {
    throw new Error(`got ${traces.length} traces but ${labels.length} labels`);
  }
  if (traces.length === 0) {
    throw new Error("need at least one trace");
  }
  const markers = shiftLines(traces[0]);
  const panels = PANEL_METRICS.map((metric) => ({
    metric,
    title: TITLES[metric],
    shiftLines: markers,
    series: traces.map((rows, k) => ({
      label: labels[k],
      x: rows.map((r) => r.tVirtual),
      y: smooth(metricValues(rows, metric), smoothing),
    })),
  }));
  return { panels };
}
