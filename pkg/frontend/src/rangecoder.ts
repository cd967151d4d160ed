/**
 * Range coder and integer-CDF construction.
 *
 * This is a port of the codec's reference entropy coder and must match it
 * byte for byte: a 32-bit range coder with 16-bit probability precision and
 * byte-wise renormalization (the classic LZMA layout with a pending-0xFF
 * carry cache). The canonical decoder discards the first emitted byte, so
 * the encoder never writes it; a coded chunk therefore costs exactly 4 bytes
 * beyond the renormalization output. The frozen vector files under
 * ../vectors pin the format; `RC_FORMAT_VERSION` must match their header.
 *
 * Numeric discipline: `low` reaches 33 bits and `code`/`range` use all 32,
 * so JS bitwise operators (which truncate to int32) are off limits for
 * them. Every update is written with *, %, and Math.floor, all of which are
 * exact on integers below 2^53. CDF quantization runs the identical float64
 * op sequence as the reference (sequential sum, p / s * total, floor,
 * largest-remainder, zero promotion), which makes the tables bit-identical.
 */

export const PRECISION_BITS = 16;
export const TOTAL = 1 << PRECISION_BITS;
export const K_TOP = 1 << 24;

const SHIFT_32 = 0x100000000;
const SHIFT_24 = 0x1000000;

export const RC_FORMAT_VERSION = 1;

export class RangeCoderError extends Error {}

export class SymbolOutOfRange extends RangeCoderError {}

export class MalformedStream extends RangeCoderError {}

/**
 * Cumulative counts for symbols minQ..maxQ inclusive.
 *
 * cdf has length (maxQ - minQ + 2); cdf[0] = 0, cdf at the end = TOTAL,
 * strictly increasing so every symbol has frequency >= 1.
 */
export class CdfTable {
  readonly cdf: readonly number[];
  readonly minQ: number;
  readonly maxQ: number;

  constructor(cdf: readonly number[], minQ: number, maxQ: number) {
    const k = maxQ - minQ + 1;
    if (k < 1) {
      throw new RangeCoderError(`empty-range: [${minQ}, ${maxQ}]`);
    }
    if (cdf.length !== k + 1 || cdf[0] !== 0 || cdf[cdf.length - 1] !== TOTAL) {
      throw new RangeCoderError("cdf must run from 0 to TOTAL over the range");
    }
    for (let i = 1; i < cdf.length; i++) {
      if (cdf[i] <= cdf[i - 1]) {
        throw new RangeCoderError("cdf must be strictly increasing");
      }
    }
    this.cdf = cdf;
    this.minQ = minQ;
    this.maxQ = maxQ;
  }

  /** [cumulative, frequency] counts for one symbol. */
  span(symbol: number): [number, number] {
    if (symbol < this.minQ || symbol > this.maxQ) {
      throw new SymbolOutOfRange(
        `symbol ${symbol} outside [${this.minQ}, ${this.maxQ}]`,
      );
    }
    const i = symbol - this.minQ;
    return [this.cdf[i], this.cdf[i + 1] - this.cdf[i]];
  }
}

/**
 * Largest-remainder quantization of a pmf to integer counts summing to
 * `total`, every count >= 1.
 *
 * The op sequence is part of the cross-language contract: sequential float64
 * sum, per-entry p / s * total, floor, remainder distribution sorted by
 * (fraction desc, index asc), then zero promotion stealing one count at a
 * time from the current largest entry (ties to the lowest index).
 */
export function quantizePmf(pmf: readonly number[], total = TOTAL): number[] {
  const k = pmf.length;
  if (k < 1) {
    throw new RangeCoderError("empty-range: pmf has no symbols");
  }
  if (k > total) {
    throw new RangeCoderError(`${k} symbols cannot share ${total} counts`);
  }
  let s = 0.0;
  for (const p of pmf) {
    if (!(p >= 0.0 && Number.isFinite(p))) {
      throw new RangeCoderError(`pmf entries must be finite and >= 0, got ${p}`);
    }
    s += p;
  }
  if (s <= 0.0) {
    throw new RangeCoderError("pmf sums to zero");
  }
  const shares = pmf.map((p) => (p / s) * total);
  const counts = shares.map((x) => Math.floor(x));
  const remainder = total - counts.reduce((a, c) => a + c, 0);
  const order = Array.from(counts.keys()).sort(
    (i, j) => shares[j] - counts[j] - (shares[i] - counts[i]) || i - j,
  );
  for (const i of order.slice(0, remainder)) {
    counts[i] += 1;
  }
  for (let i = 0; i < k; i++) {
    if (counts[i] === 0) {
      counts[i] = 1;
      let donor = 0;
      for (let t = 1; t < k; t++) {
        if (counts[t] > counts[donor]) donor = t;
      }
      if (counts[donor] <= 1) {
        throw new RangeCoderError("cannot promote zeros: no donor count left");
      }
      counts[donor] -= 1;
    }
  }
  return counts;
}

/** Quantize a pmf over [minQ, maxQ] into a CdfTable. */
export function buildCdf(
  pmf: readonly number[],
  symbolRange: readonly [number, number],
): CdfTable {
  const [minQ, maxQ] = symbolRange;
  if (maxQ < minQ) {
    throw new RangeCoderError(`empty-range: [${minQ}, ${maxQ}]`);
  }
  if (pmf.length !== maxQ - minQ + 1) {
    throw new RangeCoderError(
      `pmf length ${pmf.length} does not cover [${minQ}, ${maxQ}]`,
    );
  }
  const counts = quantizePmf(pmf);
  const cdf = [0];
  for (const c of counts) {
    cdf.push(cdf[cdf.length - 1] + c);
  }
  return new CdfTable(cdf, minQ, maxQ);
}

/** Streaming encoder; feed [cumulative, frequency] pairs, then finish. */
export class RangeEncoder {
  private low = 0;
  private range = 0xffffffff;
  private cache = 0;
  private cacheSize = 1;
  private skippedLead = false;
  private out: number[] = [];

  encode(cum: number, freq: number): void {
    const r = Math.floor(this.range / TOTAL);
    this.low += r * cum;
    this.range = r * freq;
    while (this.range < K_TOP) {
      this.range *= 256;
      this.shiftLow();
    }
  }

  encodeSymbol(symbol: number, table: CdfTable): void {
    const [cum, freq] = table.span(symbol);
    this.encode(cum, freq);
  }

  private emit(byte: number): void {
    // The canonical decoder never looks at the first byte; drop it here.
    if (this.skippedLead) {
      this.out.push(byte);
    } else {
      this.skippedLead = true;
    }
  }

  private shiftLow(): void {
    if (this.low < 0xff000000 || this.low >= SHIFT_32) {
      const carry = Math.floor(this.low / SHIFT_32);
      this.emit((this.cache + carry) & 0xff);
      for (let i = 0; i < this.cacheSize - 1; i++) {
        this.emit((0xff + carry) & 0xff);
      }
      this.cache = Math.floor(this.low / SHIFT_24) & 0xff;
      this.cacheSize = 0;
    }
    this.cacheSize += 1;
    this.low = (this.low % SHIFT_24) * 256;
  }

  finish(): Uint8Array {
    for (let i = 0; i < 5; i++) {
      this.shiftLow();
    }
    return Uint8Array.from(this.out);
  }
}

/** Mirror of RangeEncoder over a finished byte buffer. */
export class RangeDecoder {
  private readonly data: Uint8Array;
  private pos = 0;
  private range = 0xffffffff;
  private code = 0;

  constructor(data: Uint8Array) {
    this.data = data;
    for (let i = 0; i < 4; i++) {
      this.code = (this.code % SHIFT_24) * 256 + this.nextByte();
    }
  }

  /** Bytes consumed so far; may exceed data.length on truncated streams. */
  get consumed(): number {
    return this.pos;
  }

  private nextByte(): number {
    // Reads past the end decode as zero; framing gives exact chunk bounds,
    // and a well-formed stream consumes exactly data.length bytes.
    if (this.pos < this.data.length) {
      return this.data[this.pos++];
    }
    this.pos++;
    return 0;
  }

  decodeSymbol(table: CdfTable): number {
    const r = Math.floor(this.range / TOTAL);
    const value = Math.min(Math.floor(this.code / r), TOTAL - 1);
    const i = upperBound(table.cdf, value) - 1;
    const cum = table.cdf[i];
    const freq = table.cdf[i + 1] - cum;
    this.code -= r * cum;
    this.range = r * freq;
    while (this.range < K_TOP) {
      this.code = (this.code % SHIFT_24) * 256 + this.nextByte();
      this.range *= 256;
    }
    return table.minQ + i;
  }
}

/** Rightmost insertion point: first index with a[i] > value. */
function upperBound(a: readonly number[], value: number): number {
  let lo = 0;
  let hi = a.length;
  while (lo < hi) {
    const mid = (lo + hi) >>> 1;
    if (a[mid] <= value) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

export interface CodedChunk {
  bytes: Uint8Array;
  symbolCount: number;
}

/** Encode one chunk; cdfs holds the per-symbol table (may repeat one). */
export function rcEncode(
  symbols: readonly number[],
  cdfs: readonly CdfTable[],
): CodedChunk {
  if (symbols.length !== cdfs.length) {
    throw new RangeCoderError("one table per symbol required");
  }
  const enc = new RangeEncoder();
  for (let i = 0; i < symbols.length; i++) {
    enc.encodeSymbol(symbols[i], cdfs[i]);
  }
  return { bytes: enc.finish(), symbolCount: symbols.length };
}

export function rcDecode(
  data: Uint8Array,
  cdfs: readonly CdfTable[],
  symbolCount: number,
): number[] {
  if (symbolCount !== cdfs.length) {
    throw new MalformedStream(
      `chunk claims ${symbolCount} symbols, ${cdfs.length} tables supplied`,
    );
  }
  const dec = new RangeDecoder(data);
  const out = cdfs.map((t) => dec.decodeSymbol(t));
  if (dec.consumed > data.length) {
    // a well-formed chunk is consumed exactly; overshoot means truncation
    throw new MalformedStream("stream exhausted before all symbols decoded");
  }
  return out;
}
