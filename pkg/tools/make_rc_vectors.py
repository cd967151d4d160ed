"""Regenerate the frozen range-coder vector files in vectors/.

The vectors pin the byte format and the pmf -> integer-CDF quantization so any
other implementation (in any language) can prove byte parity against the
reference coder. Regenerating is only legitimate together with a bump of
RC_FORMAT_VERSION; the files are otherwise append-only.

Run from the repo root:  python3 tools/make_rc_vectors.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from nvc.rangecoder import (RC_FORMAT_VERSION, TOTAL, CdfTable, build_cdf,
                            laplace_symbol_pmf, rc_decode, rc_encode)

SEED = 20230811


def _table_json(t: CdfTable) -> dict:
    return {"min_q": t.min_q, "max_q": t.max_q, "cdf": list(t.cdf)}


def cdf_cases() -> list[dict]:
    cases = []

    def add(name, pmf, lo, hi):
        table = build_cdf(pmf, (lo, hi))
        cases.append({"name": name, "pmf": [float(p) for p in pmf],
                      "min_q": lo, "max_q": hi, "cdf": list(table.cdf)})

    add("uniform_4", [0.25] * 4, 0, 3)
    add("zero_promotion", [0.5, 0.5, 0.0], -1, 1)
    add("laplace_b1_pm8", laplace_symbol_pmf(1.0, -8, 8), -8, 8)
    add("laplace_b0p011_pm2", laplace_symbol_pmf(0.011, -2, 2), -2, 2)
    add("laplace_b20_asym", laplace_symbol_pmf(20.0, -3, 12), -3, 12)
    add("single_symbol", [1.0], 5, 5)
    add("two_skewed", [1e-9, 1.0], 0, 1)

    rng = np.random.default_rng(SEED)
    for i in range(20):
        k = int(rng.integers(2, 65))
        pmf = rng.random(k) ** 3  # cube for occasional near-zero entries
        if i % 4 == 0:
            pmf[rng.integers(0, k)] = 0.0
        lo = int(rng.integers(-40, 5))
        add(f"random_{i:02d}", [float(p) for p in pmf], lo, lo + k - 1)
    return cases


def stream_cases() -> list[dict]:
    cases = []

    def add(name, symbols, tables, table_index):
        per_symbol = [tables[j] for j in table_index]
        data, n = rc_encode(symbols, per_symbol)
        assert rc_decode(data, per_symbol, n) == list(symbols)
        cases.append({"name": name,
                      "tables": [_table_json(t) for t in tables],
                      "table_index": list(table_index),
                      "symbols": [int(s) for s in symbols],
                      "bytes_hex": data.hex()})

    uniform2 = build_cdf([0.5, 0.5], (0, 1))
    add("empty", [], [uniform2], [])
    add("one_symbol", [1], [uniform2], [0])

    rng = np.random.default_rng(SEED + 1)
    coin = [int(b) for b in rng.integers(0, 2, size=8000)]
    add("fair_coin_8000", coin, [uniform2], [0] * 8000)

    # heavy skew forces long carry chains through the renormalizer
    skew = build_cdf([1e-7, 1.0 - 2e-7, 1e-7], (-1, 1))
    add("skew_carries", [1, 1, -1, 1, 1, 1, 0, 1, 1, -1] * 30,
        [skew], [0] * 300)

    lap = build_cdf(laplace_symbol_pmf(2.0, -16, 16), (-16, 16))
    draws = np.clip(np.rint(rng.laplace(0.0, 2.0, size=1200)), -16, 16)
    add("laplace_b2_1200", [int(v) for v in draws], [lap], [0] * 1200)

    for i in range(12):
        n_tables = int(rng.integers(1, 5))
        tables = []
        for _ in range(n_tables):
            k = int(rng.integers(2, 33))
            lo = int(rng.integers(-20, 3))
            pmf = rng.random(k) ** 2
            tables.append(build_cdf([float(p) for p in pmf], (lo, lo + k - 1)))
        n = int(rng.integers(1, 2000))
        idx = [int(j) for j in rng.integers(0, n_tables, size=n)]
        syms = [int(rng.integers(tables[j].min_q, tables[j].max_q + 1))
                for j in idx]
        add(f"random_{i:02d}", syms, tables, idx)
    return cases


def main() -> None:
    out_dir = Path(__file__).resolve().parents[1] / "vectors"
    header = {"format": "rc-vectors", "version": RC_FORMAT_VERSION,
              "total": TOTAL}
    with open(out_dir / "rc_cdf.json", "w") as fh:
        json.dump({**header, "cases": cdf_cases()}, fh, indent=1)
        fh.write("\n")
    with open(out_dir / "rc_streams.json", "w") as fh:
        json.dump({**header, "cases": stream_cases()}, fh, indent=1)
        fh.write("\n")
    print(f"wrote {out_dir / 'rc_cdf.json'}")
    print(f"wrote {out_dir / 'rc_streams.json'}")


if __name__ == "__main__":
    main()
