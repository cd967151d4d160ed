import { describe, expect, it } from "vitest";

import { CdfTable, buildCdf, rcDecode, rcEncode } from "../src/rangecoder.js";
import { mulberry32, randInt } from "./helpers.js";

function randomTable(rand: () => number): CdfTable {
  const k = randInt(rand, 1, 40);
  const lo = randInt(rand, -30, 10);
  const pmf = Array.from({ length: k }, () => rand() ** 2);
  if (pmf.every((p) => p === 0)) pmf[0] = 1;
  return buildCdf(pmf, [lo, lo + k - 1]);
}

describe("round-trip fuzz", () => {
  it("survives 10^4 random streams under random CDFs", () => {
    const rand = mulberry32(0xc0dec);
    for (let iter = 0; iter < 10_000; iter++) {
      // mostly one shared table; every fourth stream mixes several, which
      // exercises the per-symbol table path the codec actually uses
      const tables =
        iter % 4 === 3
          ? Array.from({ length: randInt(rand, 2, 5) }, () =>
              randomTable(rand),
            )
          : [randomTable(rand)];
      const n = randInt(rand, 0, 60);
      const perSymbol = Array.from(
        { length: n },
        () => tables[randInt(rand, 0, tables.length)],
      );
      const syms = perSymbol.map((t) => randInt(rand, t.minQ, t.maxQ + 1));
      const chunk = rcEncode(syms, perSymbol);
      const back = rcDecode(chunk.bytes, perSymbol, chunk.symbolCount);
      expect(back).toEqual(syms);
    }
  });
});
