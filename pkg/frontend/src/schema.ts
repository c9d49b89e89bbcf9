/**
 * Trace-CSV schema: one row per evaluation window, as written by the
 * experiment harness. Parsing is strict: a missing column is an error
 * that names the column.
 */
import Papa from "papaparse";

export const REQUIRED_COLUMNS = [
  "run_id",
  "i_prime",
  "t_virtual",
  "domain",
  "miou",
  "bwt",
  "fwt",
  "final_bwt",
  "is_near_shift",
] as const;

export type ColumnName = (typeof REQUIRED_COLUMNS)[number];

/** Metric columns that become the four panels, in panel order. */
export const PANEL_METRICS = ["miou", "bwt", "final_bwt", "fwt"] as const;
export type PanelMetric = (typeof PANEL_METRICS)[number];

export interface TraceRow {
  runId: string;
  iPrime: number;
  tVirtual: number;
  domain: string;
  miou: number;
  /** null when the shifted window fell outside the stream */
  bwt: number | null;
  fwt: number | null;
  finalBwt: number;
  isNearShift: boolean;
}

export class SchemaError extends Error {
  constructor(readonly column: string, message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

function requiredNumber(raw: string, column: ColumnName, line: number): number {
  const value = Number(raw);
  if (raw === "" || raw === undefined || Number.isNaN(value)) {
    throw new SchemaError(column, `row ${line}: column "${column}" is not a number (${raw ?? ""})`);
  }
  return value;
}

function optionalNumber(raw: string, column: ColumnName, line: number): number | null {
  if (raw === "" || raw === undefined) {
    return null;
  }
  return requiredNumber(raw, column, line);
}

/** Parse one trace CSV; throws SchemaError naming the first missing column. */
export function parseTrace(csvText: string): TraceRow[] {
  const parsed = Papa.parse<Record<string, string>>(csvText.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`CSV parse error at row ${e.row}: ${e.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const column of REQUIRED_COLUMNS) {
    if (!fields.includes(column)) {
      throw new SchemaError(column, `trace is missing column "${column}"`);
    }
  }
  return parsed.data.map((rec, i) => ({
    runId: rec.run_id,
    iPrime: requiredNumber(rec.i_prime, "i_prime", i + 2),
    tVirtual: requiredNumber(rec.t_virtual, "t_virtual", i + 2),
    domain: rec.domain,
    miou: requiredNumber(rec.miou, "miou", i + 2),
    bwt: optionalNumber(rec.bwt, "bwt", i + 2),
    fwt: optionalNumber(rec.fwt, "fwt", i + 2),
    finalBwt: requiredNumber(rec.final_bwt, "final_bwt", i + 2),
    isNearShift: rec.is_near_shift === "1" || rec.is_near_shift === "true",
  }));
}
