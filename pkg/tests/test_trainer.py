"""Two-pass training step, optimizer, schedule, inference and the MI probe."""

import math

import numpy as np
import pytest

from reduxvit.bdmm import batch_mask_ratio, select_mask
from reduxvit.data import SynthSpec, generate
from reduxvit.errors import ConfigError, NumericError
from reduxvit.fusion import importance_maps
from reduxvit.renyi import IbConfig, gram_gaussian, mutual_information, renyi_entropy
from reduxvit.trainer import (SGD, TrainConfig, Trainer, batches, compute_losses, cosine_lr,
                              plan_masks, predict, probe_mi, reports_to_csv, train_step)
from reduxvit.vit import ModelConfig, forward_images, init_params

from conftest import rel_error

CFG = ModelConfig()
DATA = generate(SynthSpec(images_per_class=10))


def batch(n=8, offset=0):
    return DATA.images[offset:offset + n], DATA.labels[offset:offset + n]


# --------------------------------------------------------------- schedule
def test_cosine_lr_endpoints():
    assert cosine_lr(0, 100, 0.1) == 0.1
    assert cosine_lr(100, 100, 0.1) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, 100, 0.1) == pytest.approx(0.05, rel=1e-12)


def test_cosine_lr_monotone():
    lrs = [cosine_lr(s, 40, 1.0) for s in range(41)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


# ---------------------------------------------------------------- config
@pytest.mark.parametrize("kwargs", [{"batch_size": 1}, {"lr": 0}, {"momentum": 1.0},
                                    {"fixed_ratio": 1.0}, {"grad_clip": 0}, {"total_steps": -1}])
def test_train_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_batch_of_one_allowed_without_ib():
    TrainConfig(batch_size=1, ib=IbConfig(beta=0.0))


# -------------------------------------------------------------- optimizer
def test_sgd_momentum_rule():
    p = init_params(CFG, 0)
    opt = SGD(p, momentum=0.5)
    w0 = p["head_b"].data.copy()
    for t in p.values():
        t.grad = np.ones_like(t.data)
    opt.step(0.1)  # v = 1, w -= 0.1
    opt.step(0.1)  # v = 1.5, w -= 0.15
    np.testing.assert_allclose(p["head_b"].data, w0 - 0.25, rtol=1e-6)


def test_sgd_clip_caps_norm():
    p = init_params(CFG, 0)
    opt = SGD(p, momentum=0.0, clip=1.0)
    for t in p.values():
        t.grad = np.full_like(t.data, 3.0)
    before = {k: t.data.copy() for k, t in p.items()}
    opt.step(1.0)
    step = math.sqrt(sum(float(np.sum((before[k] - t.data).astype(np.float64) ** 2)) for k, t in p.items()))
    assert step == pytest.approx(1.0, rel=1e-5)


def test_batches_drop_tail_and_cover_epoch():
    out = list(batches(10, 3, 7, seed=0))
    assert len(out) == 7 and all(len(b) == 3 for b in out)
    first_epoch = np.concatenate(out[:3])
    assert len(set(first_epoch.tolist())) == 9
    assert [b.tolist() for b in batches(10, 3, 7, seed=0)] == [b.tolist() for b in out]


# ------------------------------------------------------------ train step
def test_overfit_single_batch_plain_ce():
    cfg = TrainConfig(batch_size=8, total_steps=20, bdmm_enabled=False, ib=IbConfig(beta=0.0))
    p = init_params(CFG, 0)
    opt = SGD(p, cfg.momentum, cfg.grad_clip)
    x, y = batch()
    losses = [train_step(x, y, p, opt, cfg, s).loss_total for s in range(20)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_single_pass_report_fields():
    cfg = TrainConfig(batch_size=8, bdmm_enabled=False)
    p = init_params(CFG, 0)
    rep = train_step(*batch(), p, SGD(p), cfg, 0)
    assert rep.r_batch == 0.0
    assert rep.loss_ce_masked == rep.loss_ce_full and rep.entropy_masked == rep.entropy_full
    assert rep.loss_total == pytest.approx(rep.loss_ce_full + cfg.ib.beta * rep.entropy_full, rel=1e-6)


def test_r_batch_matches_standalone():
    cfg = TrainConfig(batch_size=8)
    p = init_params(CFG, 3)
    x, y = batch()
    _, trace = forward_images(x, p, collect_trace=True)
    expected = batch_mask_ratio(importance_maps(trace), cfg.bdmm)
    rep = train_step(x, y, p, SGD(p), cfg, 0)
    n = CFG.num_patches
    assert rep.r_batch == min(expected, (n - 1) / n)
    assert 0 <= rep.r_batch < 1


def test_two_pass_loss_composition():
    cfg = TrainConfig(batch_size=8)
    p = init_params(CFG, 4)
    total, parts, plan = compute_losses(p, *batch(), cfg)
    ce = 0.5 * (float(parts["ce_full"].data) + float(parts["ce_masked"].data))
    h = 0.5 * (float(parts["h_full"].data) + float(parts["h_masked"].data))
    assert float(total.data) == pytest.approx(ce + cfg.ib.beta * h, rel=1e-6)
    n_kept = CFG.num_patches - len(plan.masked[0])
    assert parts["tok_masked"].shape == (8, CFG.embed_dim)
    assert plan.kept_array.shape == (8, n_kept)


def test_parameters_shared_between_passes():
    cfg = TrainConfig(batch_size=8)
    p = init_params(CFG, 5)
    seen = []
    train_step(*batch(), p, SGD(p), cfg, 0, on_pass=lambda k, params: seen.append((k, id(params), params.checksum())))
    assert [k for k, _, _ in seen] == [1, 2]
    assert seen[0][1:] == seen[1][1:]


def test_fixed_ratio_mode():
    cfg = TrainConfig(batch_size=8, fixed_ratio=0.25)
    p = init_params(CFG, 0)
    rep = train_step(*batch(), p, SGD(p), cfg, 0)
    assert rep.r_batch == 0.25


def test_warmup_delays_masking():
    from reduxvit.bdmm import BdmmConfig
    cfg = TrainConfig(batch_size=8, bdmm=BdmmConfig(warmup_steps=2))
    p = init_params(CFG, 0)
    opt = SGD(p)
    reps = [train_step(*batch(), p, opt, cfg, s) for s in range(3)]
    assert reps[0].r_batch == reps[1].r_batch == 0.0 and reps[2].r_batch > 0


def test_trainer_deterministic():
    cfg = TrainConfig(batch_size=8, total_steps=6)
    runs = []
    for _ in range(2):
        p = init_params(CFG, 1)
        reps = Trainer(p, cfg).fit(DATA.train.images, DATA.train.labels)
        runs.append((reports_to_csv(reps), p.checksum()))
    assert runs[0] == runs[1]


def test_non_finite_step_aborts():
    p = init_params(CFG, 0)
    p["head_w"].data[0, 0] = np.nan
    with pytest.raises(NumericError):
        train_step(*batch(), p, SGD(p), TrainConfig(batch_size=8), 0)


def test_two_pass_gradient_matches_numeric():
    """Composite loss, mask plan held fixed, 10 sampled parameters, float64."""
    cfg = TrainConfig(batch_size=4, ib=IbConfig(beta=0.5))
    model = ModelConfig(embed_dim=16, mlp_dim=32)
    p = init_params(model, 2, dtype=np.float64)
    rng = np.random.default_rng(2)
    for t in p.values():
        t.data += rng.standard_normal(t.shape) * 0.05
    x, y = batch(4)
    _, _, plan = compute_losses(p, x, y, cfg)

    def loss():
        return float(compute_losses(p, x, y, cfg, plan=plan)[0].data)

    p.zero_grad()
    compute_losses(p, x, y, cfg, plan=plan)[0].backward()
    names = list(p)
    analytic, numeric = [], []
    for i in rng.choice(len(names), size=10, replace=False):
        t = p[names[i]]
        idx = tuple(int(rng.integers(0, s)) for s in t.shape)
        analytic.append(t.grad[idx])
        old = t.data[idx]
        t.data[idx] = old + 1e-3
        hi = loss()
        t.data[idx] = old - 1e-3
        lo = loss()
        t.data[idx] = old
        numeric.append((hi - lo) / 2e-3)
    assert rel_error(analytic, numeric) < 1e-2


def test_no_gradient_through_mask_selection():
    """Nudging importance values without changing the selected set changes nothing."""
    cfg = TrainConfig(batch_size=8)
    p = init_params(CFG, 6)
    x, y = batch()
    _, trace = forward_images(x, p, collect_trace=True)
    plan = plan_masks(trace, cfg)
    maps = [m.values for m in importance_maps(trace)]
    nudged = [v + 1e-9 * np.arange(len(v)) for v in maps]
    plan2 = select_mask(nudged, plan.r_batch)
    assert plan2.masked == plan.masked
    grads = []
    for pl in (plan, plan2):
        p.zero_grad()
        compute_losses(p, x, y, cfg, plan=pl)[0].backward()
        grads.append({k: t.grad.copy() for k, t in p.items()})
    for k in grads[0]:
        assert np.array_equal(grads[0][k], grads[1][k])


# ------------------------------------------------------------ inference
def test_predict_matches_forward_and_ignores_training_flags():
    p = init_params(CFG, 7)
    x, _ = batch(5)
    classes, logits = predict(x, p)
    ref, _ = forward_images(x, p)
    np.testing.assert_array_equal(logits, ref.data)
    cls0, l0 = predict(x[0], p)
    assert cls0 == classes[0] and l0.shape == (4,)
    assert np.array_equal(np.argmax(logits + 123.0, axis=1), classes)


def test_predict_agrees_with_final_report_on_overfit_set():
    cfg = TrainConfig(batch_size=20, total_steps=60, lr=0.02)
    p = init_params(CFG, 0)
    x, y = batch(20)
    opt = SGD(p, cfg.momentum, cfg.grad_clip)
    reps = [train_step(x, y, p, opt, cfg, s) for s in range(cfg.total_steps)]
    classes, _ = predict(x, p)
    assert reps[-1].acc == 1.0
    assert float(np.mean(classes == y)) == reps[-1].acc


# -------------------------------------------------------------- MI probe
def test_probe_untrained_finite_nonnegative():
    rows = probe_mi(*batch(16), init_params(CFG, 0))
    assert [r.layer for r in rows] == [1, 2]
    for r in rows:
        assert math.isfinite(r.i_xt) and math.isfinite(r.i_ty)
        assert r.i_xt >= 0 and r.i_ty >= 0


def test_probe_embedding_source():
    rows = probe_mi(*batch(16), init_params(CFG, 0), x_source="embedding")
    assert len(rows) == 2
    with pytest.raises(ConfigError):
        probe_mi(*batch(16), init_params(CFG, 0), x_source="labels")


def test_probe_self_information():
    """I(T_l;T_l) from the probe's estimator equals its direct evaluation for every layer."""
    p = init_params(CFG, 0)
    x, _ = batch(16)
    _, trace = forward_images(x, p)
    ib = IbConfig()
    for tok in trace.cls_by_layer:
        k = gram_gaussian(tok.data, ib).data
        a = k / np.trace(k)
        direct = 2 * float(renyi_entropy(a).data) - float(renyi_entropy(a * a).data)
        assert float(mutual_information(k, k).data) == pytest.approx(direct, abs=1e-9)
        assert float(mutual_information(k, k).data) <= float(renyi_entropy(k).data) + 1e-9


def test_probe_needs_two_images():
    with pytest.raises(ConfigError):
        probe_mi(*batch(1), init_params(CFG, 0))
