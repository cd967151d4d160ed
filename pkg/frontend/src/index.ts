export {
  CdfTable,
  K_TOP,
  MalformedStream,
  PRECISION_BITS,
  RC_FORMAT_VERSION,
  RangeCoderError,
  RangeDecoder,
  RangeEncoder,
  SymbolOutOfRange,
  TOTAL,
  buildCdf,
  quantizePmf,
  rcDecode,
  rcEncode,
} from "./rangecoder.js";
export type { CodedChunk } from "./rangecoder.js";
