"""Exploration harness: sweep one desk-scale config, print the trajectory."""

import argparse
import sys
import time

import numpy as np

from fatlab.data import synth_shapes
from fatlab.models import init_model
from fatlab.optim import make_sgd
from fatlab.trainer import TrainConfig, run_training
from fatlab.attacks import pgd10_config


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", default="fgsm_at")
    ap.add_argument("--eps", type=float, default=0.3)
    ap.add_argument("--alpha", type=float, default=None)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--wd", type=float, default=5e-4)
    ap.add_argument("--momentum", type=float, default=0.9)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--train-n", type=int, default=10000)
    ap.add_argument("--test-n", type=int, default=1000)
    ap.add_argument("--channels", default="12,24")
    ap.add_argument("--fc", type=int, default=96)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reg", action="store_true")
    ap.add_argument("--lam", type=float, default=10.0)
    ap.add_argument("--mu", type=float, default=0.3)
    args = ap.parse_args()

    train = synth_shapes(args.train_n, size=args.size, k=10, seed=0, noise=args.noise)
    test = synth_shapes(args.test_n, size=args.size, k=10, seed=1, noise=args.noise)
    c1, c2 = (int(v) for v in args.channels.split(","))
    desc = {"kind": "smallcnn", "in_channels": 1, "image_hw": [args.size, args.size],
            "channels": [c1, c2], "fc_dim": args.fc, "classes": 10}
    model = init_model(desc, seed=args.seed)
    cfg = TrainConfig(variant=args.variant, use_regularizer=args.reg, lam=args.lam,
                      epsilon=args.eps, alpha=args.alpha, mu=args.mu, epochs=args.epochs,
                      batch_size=args.batch, seed=args.seed,
                      eval_attack=pgd10_config(args.eps))
    optim = make_sgd(lr=args.lr, momentum=args.momentum, weight_decay=args.wd,
                     epochs=args.epochs)

    t0 = time.perf_counter()

    def sink(rec):
        print(f"ep {rec.epoch:3d} loss {rec.loss:7.4f} clean {rec.clean_acc:5.3f} "
              f"robust {rec.robust_acc_pgd10:5.3f} asr {rec.asr_train:5.3f} "
              f"dl2 {rec.mean_delta_l2:6.3f} [{rec.wall_ms} ms]", flush=True)

    result = run_training(model, train, test, cfg, optim, sink=sink)
    print(f"total {time.perf_counter()-t0:.0f}s co_epoch={result.co_epoch} "
          f"best={result.choice.best if result.choice else None} "
          f"max_asr={max((r.asr_train for r in result.history), default=0):.3f}")


if __name__ == "__main__":
    sys.exit(main())
