"""Accuracy against observed fraction (K=0 and K=3) and against K at 20% observed."""

import dataclasses

from _common import base_parser, setup, write_rows

from motionrank.anticipate import DEFAULT_FRACTIONS
from motionrank.experiments import BenchmarkConfig, curve, mean_sweep, sweep, train_seed


def main():
    p = base_parser(__doc__)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--jobs", type=int, default=1)
    args = p.parse_args()
    setup(args)
    base = BenchmarkConfig()
    cfg = dataclasses.replace(base, n_per_class=args.n_per_class,
                              generator=dataclasses.replace(base.generator, epochs=args.epochs))
    curve_rows, sweep_rows, sweeps = [], [], []
    for seed in args.seeds:
        run = train_seed(cfg, seed)
        for k in (0, args.k):
            for frac, acc in curve(run, cfg, k, DEFAULT_FRACTIONS, jobs=args.jobs).points:
                curve_rows.append([f"{frac:g}", f"{acc:.6f}", k, seed])
        s = sweep(run, cfg, args.k_max, args.fraction, jobs=args.jobs)
        sweeps.append(s)
        sweep_rows += [[k, f"{acc:.6f}", f"{args.fraction:g}", seed] for k, acc in s]
        print(f"seed {seed} sweep " + " ".join(f"{a:.3f}" for _, a in s), flush=True)
    write_rows(args.out / "curve.csv", ["fraction", "accuracy", "k", "seed"], curve_rows)
    write_rows(args.out / "sweep.csv", ["k", "accuracy", "fraction", "seed"], sweep_rows)
    mean = mean_sweep(sweeps)
    print("mean sweep " + " ".join(f"K={k}:{a:.3f}" for k, a in mean))


if __name__ == "__main__":
    main()
