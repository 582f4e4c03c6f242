"""Train on three rooms, test on the fourth.

The CE-only arm fits the source rooms perfectly yet loses accuracy in the
unseen room; the full objective aligns the rooms in code space and keeps
most of it. Ten labeled target samples then adapt the full model.

Takes a few minutes on one CPU core. Pass a target room letter (A-D) as the
first argument to pick another split.
"""

import sys
import time

import torch

from airfi import (AirFiConfig, GenConfig, SplitPlan, arm_config, evaluate, fewshot_adapt, generate_dataset,
                   select_fewshot_samples, split_leave_one_env, train)
from airfi.csi_core import split_holdout

torch.set_num_threads(1)
target_env = "ABCD".index(sys.argv[1].upper()) if len(sys.argv) > 1 else 3

data = generate_dataset(GenConfig())
plan = SplitPlan.leave_one_out(range(4), target_env)
sources, target = split_leave_one_env(data, plan)
print(f"split {plan.name}: {sum(len(d) for d in sources.values())} source samples, {len(target)} target samples")

# same-room accuracy comes from 20% of each source room kept out of training
parts = {e: split_holdout(d, 0.2) for e, d in sources.items()}
kept = {e: p[0] for e, p in parts.items()}
held = {e: p[1] for e, p in parts.items()}

models = {}
for arm in ("ce_only", "full"):
    t0 = time.time()
    model = train(kept, arm_config(AirFiConfig(), arm))
    same = sum(evaluate(model, h).overall * len(h) for h in held.values()) / sum(len(h) for h in held.values())
    other = evaluate(model, target).overall
    print(f"{arm:8s} same-room {same:.3f}  unseen room {other:.3f}  ({time.time() - t0:.0f}s)")
    models[arm] = model

picked, rest = select_fewshot_samples(target, 10)
before = evaluate(models["full"], rest).overall
adapted = fewshot_adapt(models["full"], picked)
print(f"few-shot (k=10): {before:.3f} -> {evaluate(adapted, rest).overall:.3f} on the other {len(rest)} target samples")
