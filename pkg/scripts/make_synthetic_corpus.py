"""Write a seeded corpus of synthetic whale-like scenes plus truth.csv.

Usage: python3 scripts/make_synthetic_corpus.py OUT_DIR [--n 200] [--seed 0]
"""
import argparse

from callosity.imaging import write_synthetic_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir")
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    paths = write_synthetic_corpus(args.out_dir, args.n, args.seed)
    print(f"wrote {len(paths)} scenes to {args.out_dir}")


if __name__ == "__main__":
    main()
