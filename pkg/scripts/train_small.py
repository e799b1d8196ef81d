#!/usr/bin/env python3
"""Train one small-scale policy (600 ARS iterations, 32 perturbations / top 8).

This is the configuration the acceptance experiments use; the defaults match
the full-scale recipe except for the iteration and perturbation budget.

Example:
    python scripts/train_small.py --method mso --seed 0 --out runs/small_mso0.json
"""

import argparse
import sys
import time

from metastrat.ars import ArsConfig
from metastrat.trainers import MsoConfig, checkpoint_to_json, train


def small_config(method: str, seed: int, env: str = "sliding_mass", e: int = 25, h: int = 30,
                 total_iterations: int = 600, so_method: str = "bo", latent_dim: int = 2,
                 workers: int = 1) -> MsoConfig:
    if total_iterations % h:
        raise SystemExit(f"total_iterations ({total_iterations}) must be divisible by h ({h})")
    return MsoConfig(
        method=method,
        env_name=env,
        n_tasks=5,
        inner_updates=h,
        outer_iterations=total_iterations // h,
        so_budget_train=e,
        so_init_samples=5,
        so_method=so_method,
        latent_dim=latent_dim,
        ars=ArsConfig(num_perturbations=32, top_b=8),
        seed=seed,
        workers=workers,
    )


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--method", choices=["mso", "dr", "so_pup"], default="mso")
    ap.add_argument("--env", choices=["sliding_mass", "cart_pole"], default="sliding_mass")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--e", type=int, default=25, help="episodes per training-time latent search")
    ap.add_argument("--h", type=int, default=30, help="policy updates per block")
    ap.add_argument("--latent-dim", type=int, default=2)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", required=True, help="checkpoint JSON path")
    args = ap.parse_args(argv)

    cfg = small_config(
        args.method, args.seed, env=args.env, e=args.e, h=args.h,
        total_iterations=args.iterations, latent_dim=args.latent_dim, workers=args.workers,
    )
    t0 = time.time()
    ckpt = train(cfg)
    with open(args.out, "w") as fh:
        fh.write(checkpoint_to_json(ckpt))
    print(
        f"{args.method} seed {args.seed}: {cfg.total_iterations} iterations in {time.time() - t0:.0f}s, "
        f"final mean return {ckpt.history['final_mean_return']:.2f} -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
