"""Information plane: I(X;T) and I(T;Y) per layer, before and after training.

Run:  python demos/information_plane.py    (about 20 seconds)
"""
from reduxvit import ModelConfig, SynthSpec, TrainConfig, Trainer, generate, init_params, probe_mi
from reduxvit.renyi import IbConfig

ds = generate(SynthSpec(seed=0))
test = ds.test

for beta in (0.0, 0.005):
    params = init_params(ModelConfig(), seed=0)
    before = probe_mi(test.images, test.labels, params)
    cfg = TrainConfig(batch_size=8, total_steps=300, ib=IbConfig(beta=beta))
    Trainer(params, cfg).fit(ds.train.images, ds.train.labels)
    after = probe_mi(test.images, test.labels, params)
    print(f"beta = {beta}")
    for b, a in zip(before, after):
        print(f"  layer {a.layer}: I(X;T) {b.i_xt:.3f} -> {a.i_xt:.3f}   I(T;Y) {b.i_ty:.3f} -> {a.i_ty:.3f}")
