"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel runs on the same inputs under both backends; outputs are checked
for agreement before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from ddf.kernels import available_backends


def _cases(rng):
    z = rng.standard_normal((1000, 64))
    book = rng.standard_normal((512, 64))
    a = rng.integers(0, 50, 400).astype(np.int64)
    b = rng.integers(0, 50, 400).astype(np.int64)
    x = np.clip(rng.standard_normal(160_000) * 0.3, -1, 1)
    codes = rng.integers(0, 1024, 160_000).astype(np.int64)
    frames = rng.standard_normal((1000, 512))
    power = rng.random((1000, 2049))
    bin_class = rng.integers(-1, 12, 2049).astype(np.int64)
    return {
        "nearest_codes 1000x512x64": ("nearest_codes", (z, book)),
        "levenshtein 400x400": ("levenshtein", (a, b)),
        "mu_law_encode 10 s": ("mu_law_encode", (x, 10)),
        "mu_law_decode 10 s": ("mu_law_decode", (codes, 10)),
        "overlap_add 1000 frames": ("overlap_add", (frames, 160)),
        "chroma_fold 1000x2049": ("chroma_fold", (power, bin_class, 12)),
    }


def run(repeat: int = 5, seed: int = 0) -> list[dict]:
    backends = available_backends()
    rows = []
    for label, (name, args) in _cases(np.random.default_rng(seed)).items():
        outs, times = {}, {}
        for backend, mod in backends.items():
            fn = getattr(mod, name)
            outs[backend] = fn(*args)
            times[backend] = min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))
        ref = outs["python"]
        agree = all(np.allclose(o, ref) for o in outs.values())
        row = {"kernel": label, "agree": bool(agree), **{f"{k}_s": v for k, v in times.items()}}
        if "cython" in times:
            row["speedup"] = times["python"] / times["cython"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="also write the rows as JSON")
    args = p.parse_args(argv)
    rows = run(args.repeat, args.seed)
    if "cython_s" not in rows[0]:
        print("compiled kernels not built; only the fallback was timed", file=sys.stderr)
    print(f"{'kernel':28} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>8}  agree")
    for r in rows:
        cy = f"{1e3 * r['cython_s']:12.3f}" if "cython_s" in r else f"{'-':>12}"
        sp = f"{r['speedup']:8.1f}" if "speedup" in r else f"{'-':>8}"
        print(f"{r['kernel']:28} {1e3 * r['python_s']:12.3f} {cy} {sp}  {r['agree']}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
