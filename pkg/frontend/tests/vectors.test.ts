import { readFileSync } from "node:fs";

import { describe, expect, it } from "vitest";

import {
  CdfTable,
  RC_FORMAT_VERSION,
  TOTAL,
  buildCdf,
  rcDecode,
  rcEncode,
} from "../src/rangecoder.js";

interface CdfCase {
  name: string;
  pmf: number[];
  min_q: number;
  max_q: number;
  cdf: number[];
}

interface StreamCase {
  name: string;
  tables: { min_q: number; max_q: number; cdf: number[] }[];
  table_index: number[];
  symbols: number[];
  bytes_hex: string;
}

interface VectorDoc<C> {
  format: string;
  version: number;
  total: number;
  cases: C[];
}

function loadVectors<C>(name: string): VectorDoc<C> {
  const doc = JSON.parse(
    readFileSync(new URL(`../../vectors/${name}`, import.meta.url), "utf8"),
  ) as VectorDoc<C>;
  // format drift must fail loudly, not decode garbage
  expect(doc.format).toBe("rc-vectors");
  expect(doc.version).toBe(RC_FORMAT_VERSION);
  expect(doc.total).toBe(TOTAL);
  return doc;
}

describe("frozen reference vectors", () => {
  it("reproduces every CDF table bit for bit", () => {
    const doc = loadVectors<CdfCase>("rc_cdf.json");
    expect(doc.cases.length).toBeGreaterThanOrEqual(20);
    for (const c of doc.cases) {
      const table = buildCdf(c.pmf, [c.min_q, c.max_q]);
      expect(table.cdf, c.name).toEqual(c.cdf);
    }
  });

  it("reproduces every coded stream byte for byte", () => {
    const doc = loadVectors<StreamCase>("rc_streams.json");
    expect(doc.cases.length).toBeGreaterThanOrEqual(12);
    for (const c of doc.cases) {
      const tables = c.tables.map(
        (t) => new CdfTable(t.cdf, t.min_q, t.max_q),
      );
      const perSymbol = c.table_index.map((j) => tables[j]);
      const chunk = rcEncode(c.symbols, perSymbol);
      expect(Buffer.from(chunk.bytes).toString("hex"), c.name).toBe(
        c.bytes_hex,
      );
      expect(
        rcDecode(chunk.bytes, perSymbol, chunk.symbolCount),
        c.name,
      ).toEqual(c.symbols);
    }
  });
});
