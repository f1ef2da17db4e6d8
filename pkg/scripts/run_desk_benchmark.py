"""Desk-scale benchmark: overlap and auxiliary-size sweeps at d = 2000.

Writes long and aggregate TSVs to the output directory and prints the
aggregate table.  Usage::

    python scripts/run_desk_benchmark.py --out-dir results/desk --threads 4
"""

import argparse
import logging
from pathlib import Path

from nebula.bench import BenchmarkConfig, Setting, run_benchmark, write_benchmark
from nebula.io import read_tsv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", type=Path, default=Path("results/desk"))
    p.add_argument("--replications", type=int, default=50)
    p.add_argument("--d", type=int, default=2000)
    p.add_argument("--mu", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    settings = [Setting(pct, 1000, 100, 100, args.mu) for pct in (0.0, 25.0, 50.0, 100.0)]
    settings += [Setting(50.0, n, 100, 100, args.mu) for n in (250, 500)]
    cfg = BenchmarkConfig(settings=settings, replications=args.replications, d=args.d,
                          seed=args.seed, threads=args.threads)
    result = run_benchmark(cfg, progress=lambda i, n: logging.info("replication %d/%d", i, n))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    long_path, agg_path = args.out_dir / "long.tsv", args.out_dir / "aggregate.tsv"
    write_benchmark(result, long_path, agg_path)

    header, rows = read_tsv(agg_path)
    print("\t".join(header))
    for r in rows:
        print("\t".join(r))
    print(f"failed replications: {result.failures}/{result.total}")


if __name__ == "__main__":
    main()
