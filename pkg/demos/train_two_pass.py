"""Short two-pass training run on the synthetic glyph set, then inference.

Run:  python demos/train_two_pass.py    (about 10 seconds)
"""
import numpy as np

from reduxvit import ModelConfig, SynthSpec, TrainConfig, Trainer, generate, init_params, predict

ds = generate(SynthSpec(seed=0))
train, test = ds.train, ds.test
print(f"{len(train)} training images, {len(test)} test images")

cfg = TrainConfig(batch_size=8, total_steps=300)
params = init_params(ModelConfig(), seed=0)


def progress(report):
    if report.step % 50 == 0:
        print(f"step {report.step:4d}  loss {report.loss_total:.4f}  "
              f"ce(full/masked) {report.loss_ce_full:.3f}/{report.loss_ce_masked:.3f}  "
              f"r_batch {report.r_batch:.3f}  acc {report.acc:.2f}")


reports = Trainer(params, cfg).fit(train.images, train.labels, callback=progress)

for name, part in (("train", train), ("test", test)):
    classes, _ = predict(part.images, params)
    print(f"{name} accuracy: {np.mean(classes == part.labels):.3f}")
print("mean r_batch over run:", round(float(np.mean([r.r_batch for r in reports])), 3))
