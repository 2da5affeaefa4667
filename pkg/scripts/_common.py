"""Argument helpers shared by the experiment scripts."""

import argparse
import csv
import logging
from pathlib import Path


def parse_seeds(text):
    """``"0-4"`` or ``"0,2,5"``."""
    if "-" in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def base_parser(description, default_seeds="0-4", n_per_class=20):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=parse_seeds, default=parse_seeds(default_seeds))
    p.add_argument("--n-per-class", type=int, default=n_per_class)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--out", type=Path, default=Path("results"))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def setup(args):
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
