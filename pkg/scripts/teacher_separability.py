"""Held-out frame-level accuracy of static and dynamic teachers over seeds."""

import dataclasses

from _common import base_parser, setup, write_rows

from motionrank.experiments import BenchmarkConfig, train_seed, teacher_accuracy


def main():
    args = base_parser(__doc__, "0-2", n_per_class=10).parse_args()
    setup(args)
    base = BenchmarkConfig()
    cfg = dataclasses.replace(base, n_per_class=args.n_per_class,
                              teacher=dataclasses.replace(base.teacher, epochs=args.epochs))
    rows = []
    for seed in args.seeds:
        run = train_seed(cfg, seed, loss_sets=())
        dyn, st = teacher_accuracy(run, cfg, "dynamic"), teacher_accuracy(run, cfg, "static")
        rows.append([seed, f"{dyn:.6f}", f"{st:.6f}"])
        print(f"seed {seed}: dynamic {dyn:.3f}  static {st:.3f}  ({run.seconds:.0f}s)", flush=True)
    write_rows(args.out / "teachers.csv", ["seed", "dynamic_test_acc", "static_test_acc"], rows)


if __name__ == "__main__":
    main()
