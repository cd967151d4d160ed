import { describe, expect, it } from "vitest";

import {
  MalformedStream,
  SymbolOutOfRange,
  TOTAL,
  buildCdf,
  rcDecode,
  rcEncode,
} from "../src/rangecoder.js";
import { mulberry32, randInt } from "./helpers.js";

describe("range coder", () => {
  it("round-trips an empty chunk", () => {
    const chunk = rcEncode([], []);
    expect(chunk.symbolCount).toBe(0);
    expect(rcDecode(chunk.bytes, [], 0)).toEqual([]);
  });

  it("codes 8000 fair-coin symbols within the entropy window", () => {
    // 8000 fair-coin symbols = 1000 bytes of entropy; 32 bytes slack
    const rand = mulberry32(5);
    const syms = Array.from({ length: 8000 }, () => randInt(rand, 0, 2));
    const t = buildCdf([0.5, 0.5], [0, 1]);
    const { bytes } = rcEncode(syms, new Array(syms.length).fill(t));
    expect(bytes.length).toBeGreaterThanOrEqual(1000);
    expect(bytes.length).toBeLessThanOrEqual(1032);
  });

  it("stays within 1.02x table entropy plus slack on a skewed stream", () => {
    // geometric-ish pmf; symbols drawn from the table's own distribution
    const pmf = Array.from({ length: 24 }, (_, i) => 2 ** -i);
    const t = buildCdf(pmf, [0, 23]);
    const rand = mulberry32(77);
    const syms: number[] = [];
    let idealBits = 0;
    for (let i = 0; i < 20000; i++) {
      const u = randInt(rand, 0, TOTAL);
      let s = 0;
      while (t.cdf[s + 1] <= u) s++;
      syms.push(s);
      const [, freq] = t.span(s);
      idealBits -= Math.log2(freq / TOTAL);
    }
    const { bytes } = rcEncode(syms, new Array(syms.length).fill(t));
    expect(bytes.length).toBeGreaterThanOrEqual(1000); // bound claimed above 1 kB
    expect(bytes.length).toBeLessThanOrEqual((idealBits / 8) * 1.02 + 32);
  });

  it("rejects out-of-range symbols at encode time", () => {
    const t = buildCdf([0.5, 0.5], [0, 1]);
    expect(() => rcEncode([2], [t])).toThrow(SymbolOutOfRange);
  });

  it("rejects a symbol-count / table-count mismatch", () => {
    const t = buildCdf([0.5, 0.5], [0, 1]);
    const { bytes } = rcEncode([0, 1], [t, t]);
    expect(() => rcDecode(bytes, [t, t], 3)).toThrow(MalformedStream);
  });

  it("detects truncated streams", () => {
    const rand = mulberry32(3);
    const pmf = Array.from({ length: 16 }, () => rand());
    const t = buildCdf(pmf, [0, 15]);
    const syms = Array.from({ length: 500 }, () => randInt(rand, 0, 16));
    const chunk = rcEncode(syms, new Array(syms.length).fill(t));
    const cut = chunk.bytes.slice(0, chunk.bytes.length >> 1);
    expect(() =>
      rcDecode(cut, new Array(syms.length).fill(t), chunk.symbolCount),
    ).toThrow(MalformedStream);
  });
});
