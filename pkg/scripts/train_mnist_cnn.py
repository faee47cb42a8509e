"""Train the MNIST preset (20000 steps, batch 50, lr 1e-4) and cache the result.

Usage: python3 scripts/train_mnist_cnn.py [--steps N] [--force]
"""
import argparse
import json
import logging

from threadpoolctl import threadpool_limits

from callosity.experiments import MnistCnnConfig, run_mnist_cnn


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    def progress(rec):
        logging.info("step %d loss %.4f train_acc %.3f", rec["step"], rec["loss"], rec["train_accuracy"])

    with threadpool_limits(args.threads):
        res = run_mnist_cnn(MnistCnnConfig(steps=args.steps, seed=args.seed), force=args.force,
                            progress=progress)
    print(json.dumps({k: v for k, v in res.items() if k != "train_config"}, indent=2))


if __name__ == "__main__":
    main()
