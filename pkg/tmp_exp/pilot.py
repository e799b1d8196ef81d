import sys, time, json
import numpy as np
from metastrat.trainers import MsoConfig, train, checkpoint_to_json
from metastrat.ars import ArsConfig

method = sys.argv[1]
seed = int(sys.argv[2])
cfg = MsoConfig(
    method=method,
    env_name="sliding_mass",
    n_tasks=5,
    inner_updates=30,
    outer_iterations=20,       # 600 total iterations
    so_budget_train=25,
    so_init_samples=5,
    latent_dim=2,
    ars=ArsConfig(num_perturbations=32, top_b=8),
    seed=seed,
)
t0 = time.time()
curve = []
ck = train(cfg, progress_cb=lambda i, m, s, st: curve.append(m))
out = f"tmp_exp/{method}_{seed}.json"
open(out, "w").write(checkpoint_to_json(ck))
print(f"{method} seed {seed}: {time.time()-t0:.0f}s final {curve[-1]:.1f} "
      f"first10% {np.mean(curve[:60]):.1f} last10% {np.mean(curve[-60:]):.1f}", flush=True)
