"""Full-scale benchmark: d = 10000, 200 replications, overlap x aux-size grid.

This is the long run; use several threads.  Usage::

    python scripts/run_full_benchmark.py --out-dir results/full --threads 8
"""

import argparse
import logging
from pathlib import Path

from nebula.bench import BenchmarkConfig, run_benchmark, settings_grid, write_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", type=Path, default=Path("results/full"))
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    settings = settings_grid(overlaps=(0, 25, 50, 100), aux_sizes=(250, 500, 1000),
                             nonnull_target=(100,), nonnull_aux=(100,), mus=(0.15,))
    cfg = BenchmarkConfig(settings=settings, replications=args.replications, d=10_000,
                          seed=args.seed, threads=args.threads)
    result = run_benchmark(cfg, progress=lambda i, n: logging.info("replication %d/%d", i, n))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_benchmark(result, args.out_dir / "long.tsv", args.out_dir / "aggregate.tsv")
    print(f"failed replications: {result.failures}/{result.total}")


if __name__ == "__main__":
    main()
