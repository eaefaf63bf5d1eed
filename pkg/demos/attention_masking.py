"""From attention maps to a per-batch mask ratio and the masked patch sets.

Run:  python demos/attention_masking.py
"""
import numpy as np

from reduxvit import (BdmmConfig, ModelConfig, SynthSpec, batch_mask_ratio, forward_images, fuse,
                      generate, importance_maps, init_params, row_average, select_mask, strip_class)
from reduxvit.data import BACKGROUND, CUE, FOREGROUND

ds = generate(SynthSpec(images_per_class=2))
params = init_params(ModelConfig(), seed=0)
images = ds.images[:8]

logits, trace = forward_images(images, params, collect_trace=True)
print("attention trace", trace.attn.shape, "(B, L, K, S, S)")

# fusion by hand for the first image ...
v = strip_class(row_average(fuse(trace.image(0))))
print("patch importance (image 0):")
print(np.round(v.reshape(4, 4), 4))

# ... and for the whole batch
maps = importance_maps(trace, ds.ids[:8])
for lam in (0.8, 1.0, 1.2):
    r = batch_mask_ratio(maps, BdmmConfig(lam=lam))
    print(f"lambda={lam}: r_batch = {r:.4f}")

r = batch_mask_ratio(maps)
plan = select_mask(maps, r)
names = {FOREGROUND: "fg", CUE: "cue", BACKGROUND: "bg"}
for i in range(3):
    roles = [names[k] for k in ds.roles[i][plan.masked[i]]]
    print(ds.ids[i], "masked", plan.masked[i], roles)
