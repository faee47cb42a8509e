"""k-NN (k=5, Euclidean) on raw MNIST pixels; results are cached like the CNN runs.

Usage: python3 scripts/run_knn_mnist.py [--n-train N] [--n-test N] [--k K] [--p P]
"""
import argparse
import json

from threadpoolctl import threadpool_limits

from callosity.experiments import run_mnist_knn


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-train", type=int, default=None, help="stratified subsample (default: all 60000)")
    ap.add_argument("--n-test", type=int, default=None, help="stratified subsample (default: all 10000)")
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    with threadpool_limits(args.threads):
        res = run_mnist_knn(args.n_train, args.n_test, args.k, args.p, args.seed)
    print(json.dumps(res, indent=2))


if __name__ == "__main__":
    main()
