"""Acceptance suite.

One test per acceptance criterion, each printing a single pass/fail line
(run with ``pytest -s tests/test_acceptance.py -m ''`` to see them inline).
Criteria 7-10 involve real training runs: 7 (overfit smoke) is marked slow
but runs by default; 8/9 (reduced-scale ordering experiment) and 10
(full-scale protocol) take hours and are opt-in via environment variables:

    TRANSLSEG_ACCEPT_ORDERING=1   enables criteria 8 and 9
    TRANSLSEG_ACCEPT_FULLSCALE=1  enables criterion 10 (also needs
    TRANSLSEG_IDX_DIR pointing at the real digit IDX files)
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest
import torch

import translseg.data.mnist as mnist_mod
from translseg.blocks import SpectralState, spectral_normalize
from translseg.data import (
    AugmentConfig,
    ClutterSpec,
    DatasetManifest,
    TrainingBatcher,
    augment,
    generate_cluttered_mnist,
    sample_augment_params,
    synthetic_digit_source,
)
from translseg.data.seeds import derived_rng
from translseg.harness import run_experiment
from translseg.harness.checkpoint import load_checkpoint, restore_model
from translseg.harness.config import config_from_dict
from translseg.losses import (
    LossWeights,
    cycle_loss,
    dice_loss,
    hinge_discriminator_loss,
    hinge_generator_loss,
    l1_loss,
    latent_loss,
    total_generator_loss,
)
from translseg.model import (
    OptimizerConfig,
    TranslationModel,
    build_optimizers,
    training_step,
)
from translseg.networks import preset

from conftest import parameter_checksum, tiny_preset
from test_losses import (
    dice_oracle,
    hinge_d_oracle,
    l1_oracle,
    latent_oracle,
    random_bundles,
)

ORDERING_ENV = "TRANSLSEG_ACCEPT_ORDERING"
FULLSCALE_ENV = "TRANSLSEG_ACCEPT_FULLSCALE"


def check(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {criterion:>2} ({name}): {status}"
          f"{': ' + detail if detail else ''}")
    assert ok, f"criterion {criterion} ({name}) failed: {detail}"


# -- criterion 1: loss oracle suite ---------------------------------------------

def test_criterion_1_loss_oracles():
    rng = np.random.default_rng(10)
    worst = 0.0

    def close(got, want, rel=1e-6):
        nonlocal worst
        err = abs(got - want) / max(abs(want), 1e-12)
        worst = max(worst, err if abs(want) > 1e-12 else abs(got - want))
        return abs(got - want) <= rel * max(abs(want), 1.0)

    ok = True
    for _ in range(50):
        shape = tuple(rng.integers(1, 6, size=3))
        pred, target = rng.random(shape), (rng.random(shape) > 0.5) * 1.0
        ok &= close(float(dice_loss(torch.tensor(pred),
                                    torch.tensor(target))),
                    dice_oracle(pred, target))
        a, b = rng.standard_normal(shape), rng.standard_normal(shape)
        ok &= close(float(l1_loss(torch.tensor(a), torch.tensor(b))),
                    l1_oracle(a, b))
        real, fake = rng.standard_normal(5) * 2, rng.standard_normal(5) * 2
        ok &= close(float(hinge_discriminator_loss(torch.tensor(real),
                                                   torch.tensor(fake))),
                    hinge_d_oracle(real, fake))
        ok &= close(float(hinge_generator_loss(torch.tensor(fake))),
                    -fake.mean())

        p, ab = random_bundles(rng)
        ok &= close(float(latent_loss(p, ab)), latent_oracle(p, ab))
        ok &= close(float(cycle_loss(ab.x_a, ab.x_apa)),
                    l1_oracle(ab.x_a.numpy(), ab.x_apa.numpy()))
        w = LossWeights()
        tgt = torch.tensor((rng.random(p.y_seg.shape) > 0.5) * 1.0)
        lm = torch.tensor([True, False])
        s_a = torch.tensor(rng.standard_normal(2))
        s_p = torch.tensor(rng.standard_normal(2))
        report = total_generator_loss(p, ab, w, seg_target=tgt,
                                      labeled_mask=lm, fake_scores=(s_a, s_p))
        expected = (w.seg * dice_oracle(p.y_seg[lm].numpy(),
                                        tgt[lm].numpy())
                    + w.rec * (l1_oracle(p.x_p.numpy(), p.x_pp.numpy())
                               + l1_oracle(ab.x_a.numpy(), ab.x_aa.numpy()))
                    + w.lat * latent_oracle(p, ab)
                    + w.cyc * l1_oracle(ab.x_a.numpy(), ab.x_apa.numpy())
                    + w.adv * (-float(s_a.mean()) - float(s_p.mean())))
        ok &= close(float(report.total), expected)
    check(1, "loss oracle suite", ok, f"max rel err {worst:.2e}")


# -- criterion 2: finite-difference gradient check -------------------------------

def test_criterion_2_gradient_check():
    # Unit term weights keep the full five-term objective while avoiding the
    # 50x scale disparity that would push small-gradient coordinates under
    # the float64 finite-difference noise floor. Coordinates whose gradient
    # sits below that floor (|f| * eps / h scale, here 1e-8) are checked
    # absolutely instead of relatively, as in standard gradcheck practice.
    torch.manual_seed(0)
    model = TranslationModel(tiny_preset(), "proposed").initialize(11)
    model.double()
    n_params = sum(p.numel() for p in model.parameters())
    assert n_params <= 5000, f"mini model has {n_params} parameters"

    gen = torch.Generator().manual_seed(21)
    x_p = torch.randn(2, 1, 8, 8, generator=gen, dtype=torch.float64)
    x_a = torch.randn(2, 1, 8, 8, generator=gen, dtype=torch.float64)
    target = (torch.rand(2, 1, 8, 8, generator=gen) > 0.6).double()
    labeled = torch.tensor([True, True])
    weights = LossWeights(adv=1.0, rec=1.0, lat=1.0, cyc=1.0, seg=1.0)

    def objective() -> torch.Tensor:
        presence = model.forward_presence(x_p)
        absence = model.forward_absence(
            x_a, torch.Generator().manual_seed(99))
        fake_scores = (model.discriminate(presence.x_pa, "A"),
                       model.discriminate(absence.x_ap, "P"))
        return total_generator_loss(presence, absence, weights,
                                    seg_target=target, labeled_mask=labeled,
                                    fake_scores=fake_scores).total

    params = [p for p in model.parameters() if p.requires_grad]
    loss = objective()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    flat_grads = [torch.zeros_like(p).reshape(-1) if g is None
                  else g.reshape(-1) for p, g in zip(params, grads)]
    sizes = [p.numel() for p in params]
    cum = np.cumsum(sizes)

    rng = np.random.default_rng(7)
    coords = rng.choice(int(cum[-1]), size=150, replace=False)
    h, rtol, atol = 1e-5, 1e-4, 1e-8
    worst, checked, failures = 0.0, 0, 0
    with torch.no_grad():
        for flat_idx in coords:
            pi = int(np.searchsorted(cum, flat_idx, side="right"))
            local = int(flat_idx - (cum[pi - 1] if pi else 0))
            param = params[pi].reshape(-1)
            original = float(param[local])
            param[local] = original + h
            with torch.enable_grad():
                f_plus = float(objective().detach())
            param[local] = original - h
            with torch.enable_grad():
                f_minus = float(objective().detach())
            param[local] = original
            fd = (f_plus - f_minus) / (2 * h)
            ad = float(flat_grads[pi][local])
            diff = abs(fd - ad)
            denom = max(abs(fd), abs(ad))
            if denom <= atol:
                if diff > atol:
                    failures += 1
                continue
            checked += 1
            rel = diff / denom
            if rel >= rtol and diff > atol:
                failures += 1
            else:
                worst = max(worst, rel)
    check(2, "gradient check", failures == 0 and checked >= 100,
          f"{checked}/{len(coords)} coords above noise floor, "
          f"{n_params} params, worst rel {worst:.2e}")


# -- criterion 3: structural identities -------------------------------------------

def test_criterion_3_structural_identities():
    model = TranslationModel(tiny_preset(), "proposed").initialize(3)
    x_p = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(1))
    x_a = torch.randn(2, 1, 8, 8, generator=torch.Generator().manual_seed(2))
    details = []

    bundle = model.forward_presence(x_p)
    residual_exact = torch.equal(bundle.x_pp, bundle.x_pa + bundle.delta_pa)
    details.append(f"residual identity {'exact' if residual_exact else 'NO'}")

    (c, u), _ = model.encode(x_p)
    h = model.encoder.stem(x_p)
    for block in model.encoder.blocks:
        h = block(h)
    raw = torch.relu(model.encoder.final_norm(h))
    split_exact = torch.equal(torch.cat([c, u], dim=1), raw)
    details.append(f"latent split {'exact' if split_exact else 'NO'}")

    # Shared-weight test: a residual-decoder conv perturbation moves both
    # outputs; seg-only parameters move only the segmentation output.
    (c, u), skips = model.encode(x_p)
    res0 = model.decode_residual(c, u, skips)
    seg0 = model.decode_segmentation(c, u, skips)
    with torch.no_grad():
        model.residual_decoder.initial.weight.add_(0.1)
    res1 = model.decode_residual(c, u, skips)
    seg1 = model.decode_segmentation(c, u, skips)
    shared = (not torch.equal(res0, res1)) and (not torch.equal(seg0, seg1))
    with torch.no_grad():
        model.seg_head.conv.weight.add_(1.0)
        for p in model.seg_norm.parameters():
            p.add_(0.5)
    res2 = model.decode_residual(c, u, skips)
    seg2 = model.decode_segmentation(c, u, skips)
    disjoint = torch.equal(res1, res2) and (not torch.equal(seg1, seg2))
    details.append(f"weight sharing {'ok' if shared and disjoint else 'NO'}")

    # D/G isolation by checksum under no-op counterpart optimizers.
    class _NoOp:
        def zero_grad(self):
            pass

        def step(self):
            pass

    model = TranslationModel(tiny_preset(), "proposed").initialize(3)
    opts = build_optimizers(model, OptimizerConfig())
    masks = (torch.rand(2, 1, 8, 8) > 0.7).float()
    labeled = torch.tensor([True, True])
    g_mods = torch.nn.ModuleList(model.generator_modules())
    d_mods = torch.nn.ModuleList(model.discriminator_modules())

    g_sum = parameter_checksum(g_mods)
    training_step(model, x_p, x_a, masks, labeled,
                  {"discriminator": opts["discriminator"],
                   "generator": _NoOp()},
                  LossWeights(), torch.Generator().manual_seed(5))
    d_step_isolated = parameter_checksum(g_mods) == g_sum

    d_sum = parameter_checksum(d_mods)
    training_step(model, x_p, x_a, masks, labeled,
                  {"discriminator": _NoOp(), "generator": opts["generator"]},
                  LossWeights(), torch.Generator().manual_seed(5))
    g_step_isolated = parameter_checksum(d_mods) == d_sum
    details.append(
        f"step isolation {'ok' if d_step_isolated and g_step_isolated else 'NO'}")

    ok = (residual_exact and split_exact and shared and disjoint
          and d_step_isolated and g_step_isolated)
    check(3, "structural identities", ok, "; ".join(details))


# -- criterion 4: spectral norm vs SVD oracle -------------------------------------

def test_criterion_4_spectral_norm():
    rng = np.random.default_rng(40)
    sigmas = []
    for trial in range(50):
        rows = int(rng.integers(2, 513))
        cols = int(rng.integers(2, 4609))
        if trial == 0:
            rows, cols = 512, 4608  # pin the extreme size
        w = torch.tensor(rng.standard_normal((rows, cols)),
                         dtype=torch.float32)
        normalized = spectral_normalize(w, SpectralState.for_weight(w),
                                        n_iters=20)
        sigma = float(np.linalg.svd(normalized.numpy(),
                                    compute_uv=False)[0])
        sigmas.append(sigma)
    lo, hi = min(sigmas), max(sigmas)
    check(4, "spectral norm", 0.95 <= lo and hi <= 1.05,
          f"sigma range [{lo:.4f}, {hi:.4f}] over 50 matrices")


# -- criterion 5: dataset suite ----------------------------------------------------

def test_criterion_5_dataset_suite(tmp_path):
    source = synthetic_digit_source(1000, seed=1)
    details = []

    # Clutter counts, verified against the real compositing calls.
    layer_log: list[tuple[str, int]] = []
    original = mnist_mod.dither_overlaps

    def logging_dither(layers, canvas_size, rng):
        layer_log.append(len(layers))
        return original(layers, canvas_size, rng)

    counts_ok = True
    mnist_mod.dither_overlaps = logging_dither
    try:
        for name, n_clutter in (("simple48", 8), ("hard48", 24),
                                ("clutter128", 80)):
            layer_log.clear()
            spec = ClutterSpec.from_preset(
                name, n_train=6, n_valid=2, n_test=2, labeled_fraction=0.0)
            generate_cluttered_mnist(spec, source, 2,
                                     tmp_path / f"counts-{name}")
            per_p = layer_log[:6]  # P examples first: digit + clutter
            per_a = layer_log[6:12]
            counts_ok &= all(n == n_clutter + 1 for n in per_p)
            counts_ok &= all(n == n_clutter for n in per_a)
    finally:
        mnist_mod.dither_overlaps = original
    details.append(f"clutter counts {'ok' if counts_ok else 'NO'}")

    # 1k-example set: labeled fraction and the single-class protocol.
    spec = ClutterSpec.from_preset("simple48", n_train=1000, n_valid=50,
                                   n_test=50, labeled_fraction=0.01,
                                   label_digit=9)
    manifest = generate_cluttered_mnist(spec, source, 3, tmp_path / "big")
    labeled = [r for r in manifest.records if r.labeled]
    labeled_ok = (len(labeled) == round(0.01 * 1000)
                  and all(r.digit_class == 9 for r in labeled)
                  and all(r.fold == "train" and r.domain == "P"
                          for r in labeled))
    details.append(f"labeled subset {'ok' if labeled_ok else 'NO'}")

    a_free = all(r.mask_path is None and r.digit_class is None
                 for r in manifest.records if r.domain == "A")
    details.append(f"A digit-free {'ok' if a_free else 'NO'}")

    spec_small = ClutterSpec.from_preset("simple48", n_train=100, n_valid=10,
                                         n_test=10, labeled_fraction=0.01,
                                         label_digit=9)
    generate_cluttered_mnist(spec_small, source, 7, tmp_path / "r1")
    generate_cluttered_mnist(spec_small, source, 7, tmp_path / "r2")
    rel1 = sorted(p.relative_to(tmp_path / "r1")
                  for p in (tmp_path / "r1").rglob("*") if p.is_file())
    rel2 = sorted(p.relative_to(tmp_path / "r2")
                  for p in (tmp_path / "r2").rglob("*") if p.is_file())
    identical = rel1 == rel2 and all(
        (tmp_path / "r1" / r).read_bytes() == (tmp_path / "r2" / r).read_bytes()
        for r in rel1)
    details.append(f"regeneration {'byte-identical' if identical else 'NO'}")

    check(5, "dataset suite", counts_ok and labeled_ok and a_free
          and identical, "; ".join(details))


# -- criterion 6: augmentation suite -----------------------------------------------

def test_criterion_6_augmentation_suite():
    image = np.random.default_rng(0).random((48, 48)).astype(np.float32)
    mask = (image > 0.5).astype(np.float32)

    out_img, out_mask = augment(image, mask, AugmentConfig.disabled(), seed=4)
    identity_ok = np.array_equal(out_img, image) and np.array_equal(out_mask,
                                                                    mask)

    cfg = AugmentConfig()
    rng = derived_rng(123, "bounds")
    bounds_ok = True
    disp = []
    for _ in range(1000):
        p = sample_augment_params(cfg, rng)
        bounds_ok &= -3.0 <= p.rotation_deg <= 3.0
        bounds_ok &= 0.9 <= p.zoom <= 1.1
        bounds_ok &= 0.9 <= p.intensity_scale <= 1.1
        bounds_ok &= p.displacements.shape == (2, 3, 3)
        disp.append(p.displacements)
    sigma = float(np.asarray(disp).std())
    bounds_ok &= 4.5 <= sigma <= 5.5

    binary_ok = True
    for seed in range(25):
        _, m = augment(image, mask, cfg, seed=seed)
        binary_ok &= set(np.unique(m)) <= {0.0, 1.0}

    check(6, "augmentation suite", identity_ok and bounds_ok and binary_ok,
          f"identity {'ok' if identity_ok else 'NO'}; "
          f"bounds over 1000 draws {'ok' if bounds_ok else 'NO'} "
          f"(disp sigma {sigma:.2f}); masks binary "
          f"{'ok' if binary_ok else 'NO'}")


# -- criterion 7: overfit smoke ------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_overfit_smoke(tmp_path):
    source = synthetic_digit_source(60, seed=2)
    spec = ClutterSpec.from_preset("simple48", n_train=20, n_valid=2,
                                   n_test=2, labeled_fraction=1.0,
                                   label_digit=None)
    manifest = generate_cluttered_mnist(spec, source, 13, tmp_path / "ds")

    model = TranslationModel(preset("mnist48"), "proposed").initialize(0)
    optimizers = build_optimizers(model, OptimizerConfig())
    weights = LossWeights(seg=1.0)  # smoke checks the segmentation path
    batcher = TrainingBatcher(manifest, batch_size=10,
                              min_labeled_per_batch=1, seed=0)
    noise = torch.Generator().manual_seed(5)

    from translseg.data.batches import evaluation_batches

    def train_dice() -> float:
        scores = []
        with torch.no_grad():
            for images, masks in evaluation_batches(manifest, "train", 10):
                pred = model.segment(images).float()
                inter = (pred * masks).sum()
                denom = pred.sum() + masks.sum()
                scores.append(float((2 * inter + 1e-7) / (denom + 1e-7)))
        return sum(scores) / len(scores)

    steps = 0
    best = 0.0
    reached = None
    while steps < 200:
        for batch in batcher.epoch(steps):
            training_step(model, batch.x_p, batch.x_a, batch.masks,
                          batch.labeled, optimizers, weights, noise)
            steps += 1
            if steps >= 200:
                break
        best = max(best, train_dice())
        if best >= 0.9:
            reached = steps
            break
    check(7, "overfit smoke", best >= 0.9,
          f"train Dice {best:.3f} after {reached or steps} generator steps")


# -- criteria 8 + 9: reduced-scale ordering experiment -------------------------------

def _ordering_run_root() -> Path:
    return Path(os.environ.get("TRANSLSEG_ORDERING_DIR",
                               "runs/acceptance-ordering"))


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get(ORDERING_ENV),
                    reason=f"hours-long training; set {ORDERING_ENV}=1 "
                           "(accelerator recommended)")
def test_criterion_8_ordering_experiment():
    root = _ordering_run_root()
    root.mkdir(parents=True, exist_ok=True)
    data_dir = root / "dataset"
    if not (data_dir / "manifest.jsonl").exists():
        source = synthetic_digit_source(20000, seed=0)
        spec = ClutterSpec.from_preset("simple48", n_train=5000, n_valid=500,
                                       n_test=500, labeled_fraction=0.01,
                                       label_digit=9)
        generate_cluttered_mnist(spec, source, 0, data_dir)

    results = {}
    for variant in ("proposed", "ae_baseline", "seg_only"):
        cfg = config_from_dict({
            "manifest": str(data_dir / "manifest.jsonl"),
            "variant": variant,
            "preset": "mnist48",
            "run_root": str(root),
            "run_name": variant,
            "training": {"epochs": 50, "batch_size": 20, "seeds": [0, 1, 2],
                         "checkpoint_every": 10, "eval_every": 2},
        })
        run_dir = cfg.run_dir()
        report_path = run_dir / "report.json"
        if not report_path.exists():  # reuse finished runs across retries
            run_experiment(cfg)
        results[variant] = json.loads(report_path.read_text())

    per_seed = {v: [s["test_dice"] for s in results[v]["per_seed"]]
                for v in results}
    wins = sum(1 for i in range(3)
               if per_seed["proposed"][i] > per_seed["ae_baseline"][i]
               > per_seed["seg_only"][i])
    margin = (results["proposed"]["test_dice_mean"]
              - results["seg_only"]["test_dice_mean"])
    check(8, "ordering experiment", wins >= 2 and margin >= 0.05,
          f"ordering holds in {wins}/3 seeds; proposed - seg_only = "
          f"{margin:.3f}")


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get(ORDERING_ENV),
                    reason=f"depends on criterion 8's run; set {ORDERING_ENV}=1")
def test_criterion_9_translation_localizes_target():
    root = _ordering_run_root()
    ckpt = root / "proposed" / "seed0" / "best.pt"
    manifest = DatasetManifest.load(root / "dataset" / "manifest.jsonl")
    model = restore_model(load_checkpoint(ckpt))

    from translseg.data.batches import evaluation_batches

    inside, outside, inside_n, outside_n, seen = 0.0, 0.0, 0.0, 0.0, 0
    with torch.no_grad():
        for images, masks in evaluation_batches(manifest, "test", 20):
            bundle = model.forward_presence(images)
            diff = (images - bundle.x_pa).abs()
            inside += float((diff * masks).sum())
            outside += float((diff * (1 - masks)).sum())
            inside_n += float(masks.sum())
            outside_n += float((1 - masks).sum())
            seen += images.shape[0]
            if seen >= 200:
                break
    # Per-pixel means over the accumulated areas.
    mean_in = inside / max(inside_n, 1.0)
    mean_out = outside / max(outside_n, 1.0)
    ratio = mean_in / max(mean_out, 1e-12)
    check(9, "translation localizes target", ratio >= 2.0,
          f"inside/outside residual ratio {ratio:.2f} over {seen} images")


# -- criterion 10: full-scale protocol (optional, not CI) -----------------------------

@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get(FULLSCALE_ENV),
                    reason="full published protocol (50k images, 300 epochs, "
                           f"3 seeds); set {FULLSCALE_ENV}=1 and "
                           "TRANSLSEG_IDX_DIR to the real digit corpus")
def test_criterion_10_full_scale_protocol(tmp_path):
    from translseg.data.sources import load_idx_source

    idx_dir = os.environ.get("TRANSLSEG_IDX_DIR")
    assert idx_dir, "TRANSLSEG_IDX_DIR must point at the IDX digit files"
    root = Path(os.environ.get("TRANSLSEG_FULLSCALE_DIR", "runs/fullscale"))
    data_dir = root / "dataset"
    if not (data_dir / "manifest.jsonl").exists():
        source = load_idx_source(idx_dir)
        spec = ClutterSpec.from_preset("simple48")  # 50k/5k/5k, 1% digit 9
        generate_cluttered_mnist(spec, source, 0, data_dir)

    expected = {"proposed": (0.79, 0.05), "ae_baseline": (0.75, 0.05),
                "seg_only": (0.61, 0.07)}
    observed = {}
    ok = True
    for variant, (target, tol) in expected.items():
        cfg = config_from_dict({
            "manifest": str(data_dir / "manifest.jsonl"),
            "variant": variant,
            "preset": "mnist48",
            "run_root": str(root),
            "run_name": variant,
            "training": {"epochs": 300, "batch_size": 20,
                         "seeds": [0, 1, 2], "checkpoint_every": 50},
        })
        report_path = cfg.run_dir() / "report.json"
        if not report_path.exists():
            run_experiment(cfg)
        mean = json.loads(report_path.read_text())["test_dice_mean"]
        observed[variant] = mean
        ok &= abs(mean - target) <= tol
    check(10, "full-scale protocol", ok,
          ", ".join(f"{v}={m:.3f}" for v, m in observed.items()))
