"""Generated dynamic-image accuracy for each combination of training losses."""

import dataclasses
from itertools import combinations

import numpy as np

from _common import base_parser, setup, write_rows

from motionrank.experiments import BenchmarkConfig, ablation, train_seed

ALL_SETS = [c for r in (1, 2, 3) for c in combinations(("dl", "sl", "cl"), r) if "dl" in c]


def main():
    p = base_parser(__doc__)
    p.add_argument("--all-sets", action="store_true",
                   help="every combination containing dl, not just dl and dl+sl+cl")
    args = p.parse_args()
    setup(args)
    sets = ALL_SETS if args.all_sets else [("dl",), ("dl", "sl", "cl")]
    base = BenchmarkConfig()
    cfg = dataclasses.replace(base, n_per_class=args.n_per_class,
                              generator=dataclasses.replace(base.generator, epochs=args.epochs))
    rows, by_set = [], {s: [] for s in sets}
    for seed in args.seeds:
        run = train_seed(cfg, seed, sets)
        for losses, (real, gen) in ablation(run, cfg).items():
            rows.append([seed, "+".join(losses), f"{real:.6f}", f"{gen:.6f}"])
            by_set[losses].append((real, gen))
            print(f"seed {seed} {'+'.join(losses):<9} real {real:.3f} generated {gen:.3f}", flush=True)
    write_rows(args.out / "ablation.csv", ["seed", "losses", "real_acc", "generated_acc"], rows)
    for losses, vals in by_set.items():
        real, gen = np.mean(vals, axis=0)
        print(f"mean {'+'.join(losses):<9} real {real:.4f} generated {gen:.4f}")


if __name__ == "__main__":
    main()
