"""Simulate one study, fit the NPMLE prior and report test error per classifier.

Usage::

    python scripts/fit_single_study.py --d 2000 --overlap 50 --aux-n 1000
"""

import argparse

from nebula.bench import BenchmarkConfig, Setting, run_replication
from nebula.simulate import draw_models, make_rng


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--d", type=int, default=2000)
    p.add_argument("--overlap", type=float, default=50.0)
    p.add_argument("--aux-n", type=int, default=1000)
    p.add_argument("--mu", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()

    s = Setting(args.overlap, args.aux_n, 100, 100, args.mu)
    cfg = BenchmarkConfig(settings=[s], replications=1, d=args.d, seed=args.seed)
    models = draw_models(cfg.sim_config(s), make_rng(cfg.seed, *s.model_key(), 0))
    result = run_replication(cfg, s, models, 0)
    for name, (err, info) in result.items():
        extra = ""
        if info["threshold"] is not None:
            extra = f"  threshold {info['threshold']:.4g}"
        if info["em"] is not None:
            extra = f"  EM iterations {info['em'].iterations}, log-lik {info['em'].final_log_likelihood:.3f}"
        print(f"{name:13s} test error {err:.3f}{extra}")


if __name__ == "__main__":
    main()
