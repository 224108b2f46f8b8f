import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from translseg.losses import (
    LossWeights,
    cycle_loss,
    dice_loss,
    hinge_discriminator_loss,
    hinge_generator_loss,
    l1_loss,
    latent_loss,
    reconstruction_loss,
    total_generator_loss,
)
from translseg.model import AbsenceBundle, PresenceBundle


# -- independent numpy oracles -------------------------------------------------

def dice_oracle(pred, target, eps=1e-7):
    pred, target = np.asarray(pred, float), np.asarray(target, float)
    inter = float((pred * target).sum())
    return 1.0 - (2.0 * inter + eps) / (pred.sum() + target.sum() + eps)


def l1_oracle(a, b):
    return float(np.abs(np.asarray(a, float) - np.asarray(b, float)).mean())


def hinge_d_oracle(real, fake):
    real, fake = np.asarray(real, float), np.asarray(fake, float)
    return float(np.maximum(0.0, 1.0 - real).mean()
                 + np.maximum(0.0, 1.0 + fake).mean())


def random_bundles(rng, batch=2, ch=1, size=4, code=3, cycle=True):
    def t(*shape):
        return torch.tensor(rng.standard_normal(shape), dtype=torch.float64)

    img = (batch, ch, size, size)
    cod = (batch, code, 2, 2)
    presence = PresenceBundle(
        x_p=t(*img), c_p=t(*cod), u_p=t(*cod), x_pa=t(*img), delta_pa=t(*img),
        x_pp=t(*img), y_seg=torch.rand(img, dtype=torch.float64,
                                       generator=torch.Generator().manual_seed(
                                           int(rng.integers(1 << 31)))),
        c_pa=t(*cod), c_pp=t(*cod), u_pp=t(*cod))
    absence = AbsenceBundle(
        x_a=t(*img), c_a=t(*cod), u_a=t(*cod), x_aa=t(*img),
        u_sampled=t(*cod), x_ap=t(*img), c_aa=t(*cod), c_ap=t(*cod),
        u_ap=t(*cod), x_apa=t(*img) if cycle else None)
    return presence, absence


def latent_oracle(p, a):
    pairs = [(p.c_p, p.c_pa), (a.c_a, a.c_ap), (a.c_a, a.c_aa),
             (p.c_p, p.c_pp), (p.u_p, p.u_pp), (a.u_sampled, a.u_ap)]
    return sum(l1_oracle(x.numpy(), y.numpy()) for x, y in pairs)


# -- dice ----------------------------------------------------------------------

class TestDiceLoss:
    def test_perfect_overlap(self):
        ones = torch.ones(4, 4)
        assert float(dice_loss(ones, ones)) == pytest.approx(0.0, abs=1e-6)

    def test_zero_overlap(self):
        pred = torch.zeros(4, 4)
        target = torch.ones(4, 4)
        assert float(dice_loss(pred, target)) == pytest.approx(1.0, abs=1e-5)

    def test_half_overlap_hand_counted(self):
        # 8 predicted positives, 8 target positives, 4 overlapping:
        # 1 - 2*4 / (8 + 8) = 0.5
        pred = torch.zeros(16)
        target = torch.zeros(16)
        pred[:8] = 1.0
        target[4:12] = 1.0
        assert float(dice_loss(pred, target)) == pytest.approx(0.5, abs=1e-6)

    def test_empty_vs_empty_is_near_zero(self):
        z = torch.zeros(5, 5)
        assert float(dice_loss(z, z)) == pytest.approx(0.0, abs=1e-9)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            dice_loss(torch.zeros(3, 3), torch.zeros(2, 2))

    def test_matches_oracle_on_random_tensors(self, rng):
        for _ in range(50):
            shape = tuple(rng.integers(1, 6, size=3))
            pred = rng.random(shape)
            target = (rng.random(shape) > 0.5).astype(float)
            got = float(dice_loss(torch.tensor(pred), torch.tensor(target)))
            assert got == pytest.approx(dice_oracle(pred, target), rel=1e-6)

    def test_joint_permutation_invariance(self, rng):
        pred = torch.tensor(rng.random(24))
        target = torch.tensor((rng.random(24) > 0.6).astype(float))
        perm = torch.randperm(24, generator=torch.Generator().manual_seed(5))
        assert float(dice_loss(pred, target)) == pytest.approx(
            float(dice_loss(pred[perm], target[perm])), rel=1e-9)

    @given(st.integers(0, 30), st.integers(0, 30))
    @settings(max_examples=25, deadline=None)
    def test_bounded_in_unit_interval(self, n_pred, n_target):
        pred = torch.zeros(30)
        target = torch.zeros(30)
        pred[:n_pred] = 1.0
        target[30 - n_target:] = 1.0
        val = float(dice_loss(pred, target))
        assert -1e-6 <= val <= 1.0 + 1e-6


# -- l1 --------------------------------------------------------------------------

class TestL1Loss:
    def test_identical_is_zero(self):
        x = torch.randn(3, 4)
        assert float(l1_loss(x, x)) == 0.0

    def test_ones_vs_zeros(self):
        assert float(l1_loss(torch.ones(5), torch.zeros(5))) == 1.0

    def test_direct_evaluation(self):
        a = torch.tensor([1.0, -1.0, 3.0])
        b = torch.zeros(3)
        assert float(l1_loss(a, b)) == pytest.approx(5.0 / 3.0, rel=1e-6)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            l1_loss(torch.zeros(3), torch.zeros(4))

    def test_matches_oracle_on_random_tensors(self, rng):
        for _ in range(50):
            shape = tuple(rng.integers(1, 5, size=4))
            a, b = rng.standard_normal(shape), rng.standard_normal(shape)
            got = float(l1_loss(torch.tensor(a), torch.tensor(b)))
            assert got == pytest.approx(l1_oracle(a, b), rel=1e-6)


# -- composite reconstruction / latent / cycle ----------------------------------

class TestCompositeLosses:
    def test_reconstruction_perfect(self, rng):
        p, a = random_bundles(rng)
        p.x_pp = p.x_p.clone()
        a.x_aa = a.x_a.clone()
        assert float(reconstruction_loss(p, a)) == 0.0

    def test_reconstruction_constant_offset(self, rng):
        p, a = random_bundles(rng)
        p.x_pp = p.x_p + 0.5
        a.x_aa = a.x_a.clone()
        assert float(reconstruction_loss(p, a)) == pytest.approx(0.5, rel=1e-6)

    def test_reconstruction_symmetric_in_terms(self, rng):
        p, a = random_bundles(rng)
        p.x_pp = p.x_p + 0.3
        a.x_aa = a.x_a.clone()
        first = float(reconstruction_loss(p, a))
        p.x_pp = p.x_p.clone()
        a.x_aa = a.x_a + 0.3
        assert float(reconstruction_loss(p, a)) == pytest.approx(first,
                                                                 rel=1e-6)

    def test_latent_all_identical_is_zero(self, rng):
        p, a = random_bundles(rng)
        p.c_pa, p.c_pp, p.u_pp = p.c_p, p.c_p, p.u_p
        a.c_ap, a.c_aa, a.u_ap = a.c_a, a.c_a, a.u_sampled
        assert float(latent_loss(p, a)) == 0.0

    def test_latent_single_offset_pair(self, rng):
        p, a = random_bundles(rng)
        p.c_pa, p.c_pp, p.u_pp = p.c_p, p.c_p, p.u_p
        a.c_ap, a.c_aa = a.c_a, a.c_a
        a.u_ap = a.u_sampled + 1.0
        assert float(latent_loss(p, a)) == pytest.approx(1.0, rel=1e-6)

    def test_latent_matches_six_term_oracle(self, rng):
        for _ in range(50):
            p, a = random_bundles(rng)
            got = float(latent_loss(p, a))
            assert got == pytest.approx(latent_oracle(p, a), rel=1e-6)

    def test_latent_missing_pair_raises(self, rng):
        p, a = random_bundles(rng)
        a.u_ap = None
        with pytest.raises(ValueError):
            latent_loss(p, a)

    def test_cycle_identical_is_zero(self, rng):
        x = torch.randn(2, 1, 4, 4)
        assert float(cycle_loss(x, x.clone())) == 0.0

    def test_cycle_disabled_is_zero(self):
        x = torch.randn(2, 1, 4, 4)
        assert float(cycle_loss(x, None, cycle_enabled=False)) == 0.0
        assert float(cycle_loss(x, x + 100, cycle_enabled=False)) == 0.0

    def test_cycle_constant_offset(self):
        x = torch.randn(2, 1, 4, 4)
        assert float(cycle_loss(x, x + 0.25)) == pytest.approx(0.25, rel=1e-6)


# -- hinge -----------------------------------------------------------------------

class TestHingeLosses:
    def test_discriminator_margins_met(self):
        real = torch.ones(4)
        fake = -torch.ones(4)
        assert float(hinge_discriminator_loss(real, fake)) == 0.0

    def test_discriminator_all_zero_scores(self):
        z = torch.zeros(4)
        assert float(hinge_discriminator_loss(z, z)) == pytest.approx(2.0)

    def test_discriminator_saturated(self):
        real = torch.full((3,), 2.0)
        fake = torch.full((3,), -3.0)
        assert float(hinge_discriminator_loss(real, fake)) == 0.0

    def test_discriminator_matches_oracle(self, rng):
        for _ in range(50):
            real = rng.standard_normal(6) * 2
            fake = rng.standard_normal(6) * 2
            got = float(hinge_discriminator_loss(torch.tensor(real),
                                                 torch.tensor(fake)))
            assert got == pytest.approx(hinge_d_oracle(real, fake), rel=1e-6)

    def test_generator_constant_scores(self):
        assert float(hinge_generator_loss(torch.full((4,), 0.5))) == -0.5
        assert float(hinge_generator_loss(torch.zeros(4))) == 0.0

    def test_generator_mean(self):
        fake = torch.tensor([1.0, -1.0])
        assert float(hinge_generator_loss(fake)) == 0.0

    def test_doubling_scores_at_most_doubles_loss(self, rng):
        for _ in range(20):
            real = torch.tensor(rng.standard_normal(5))
            fake = torch.tensor(rng.standard_normal(5))
            one = float(hinge_discriminator_loss(real, fake))
            two = float(hinge_discriminator_loss(2 * real, 2 * fake))
            assert two <= 2 * one + 1e-9


# -- total -----------------------------------------------------------------------

class TestTotalGeneratorLoss:
    def test_all_zero_weights_gives_zero(self, rng):
        p, a = random_bundles(rng)
        w = LossWeights(adv=0, rec=0, lat=0, cyc=0, seg=0)
        report = total_generator_loss(p, a, w,
                                      fake_scores=(torch.randn(2),
                                                   torch.randn(2)))
        assert float(report.total) == 0.0

    def test_only_rec_perfect_reconstructions(self, rng):
        p, a = random_bundles(rng)
        p.x_pp = p.x_p.clone()
        a.x_aa = a.x_a.clone()
        w = LossWeights(adv=0, rec=1, lat=0, cyc=0, seg=0)
        assert float(total_generator_loss(p, a, w).total) == 0.0

    def test_weighted_sum_matches_term_oracle(self, rng):
        w = LossWeights()  # tuned defaults
        for _ in range(50):
            p, a = random_bundles(rng)
            target = (torch.rand(p.y_seg.shape,
                                 generator=torch.Generator().manual_seed(3))
                      > 0.5).double()
            labeled = torch.tensor([True, False])
            s_a = torch.tensor(rng.standard_normal(2))
            s_p = torch.tensor(rng.standard_normal(2))
            report = total_generator_loss(p, a, w, seg_target=target,
                                          labeled_mask=labeled,
                                          fake_scores=(s_a, s_p))
            expected = (
                w.seg * dice_oracle(p.y_seg[labeled].numpy(),
                                    target[labeled].numpy())
                + w.rec * (l1_oracle(p.x_p.numpy(), p.x_pp.numpy())
                           + l1_oracle(a.x_a.numpy(), a.x_aa.numpy()))
                + w.lat * latent_oracle(p, a)
                + w.cyc * l1_oracle(a.x_a.numpy(), a.x_apa.numpy())
                + w.adv * (-float(s_a.mean()) - float(s_p.mean())))
            assert float(report.total) == pytest.approx(expected, rel=1e-6)

    def test_decomposition_matches_reported_terms(self, rng):
        p, a = random_bundles(rng)
        w = LossWeights(adv=2.0, rec=3.0, lat=0.5, cyc=7.0, seg=1.5)
        target = torch.ones_like(p.y_seg)
        labeled = torch.tensor([True, True])
        report = total_generator_loss(p, a, w, seg_target=target,
                                      labeled_mask=labeled,
                                      fake_scores=(torch.randn(2),
                                                   torch.randn(2)))
        t = report.terms
        recon = (w.seg * t["seg"] + w.rec * t["rec"] + w.lat * t["lat"]
                 + w.cyc * t["cyc"] + w.adv * t["adv_g"])
        assert float(report.total) == pytest.approx(recon, rel=1e-6)

    def test_no_labeled_examples_zero_seg_term(self, rng):
        p, a = random_bundles(rng)
        report = total_generator_loss(
            p, a, LossWeights(), seg_target=torch.ones_like(p.y_seg),
            labeled_mask=torch.tensor([False, False]))
        assert report.terms["seg"] == 0.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(rec=-1.0)

    def test_baseline_weight_presets(self):
        ae = LossWeights.ae_defaults()
        assert ae.rec == 1.0 and ae.seg == 1.0
        assert ae.adv == ae.lat == ae.cyc == 0.0
        w = LossWeights()
        assert (w.adv, w.rec, w.lat, w.cyc, w.seg) == (3, 50, 1, 50, 0.01)
