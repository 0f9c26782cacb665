"""Regenerate the shipped 10x10 monthly portfolio fixture."""

import argparse
from pathlib import Path

from matgpca.evaluation import fixture_path, synthetic_portfolio_panel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--missing-rate", type=float, default=0.002)
    ap.add_argument("--out", type=Path, default=fixture_path())
    args = ap.parse_args()
    d = synthetic_portfolio_panel(seed=args.seed, missing_rate=args.missing_rate)
    args.out.write_text(d.to_wide_csv())
    print(f"wrote {args.out} ({len(d.dates)} months, {int(d.missing_mask.sum())} missing cells)")


if __name__ == "__main__":
    main()
