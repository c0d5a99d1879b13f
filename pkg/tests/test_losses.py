import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from signgan import losses as L
from signgan.networks import DiscriminatorPyramid, FeatureNet


def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gan_oracle(real, fake):
    """-sum_i [mean log D_i(real) + mean log(1 - D_i(fake))] and -sum_i mean log D_i(fake)."""
    d = sum(-(np.log(np_sigmoid(r)).mean() + np.log(1 - np_sigmoid(f)).mean()) for r, f in zip(real, fake))
    g = sum(-np.log(np_sigmoid(f)).mean() for f in fake)
    return d, g


def rand_maps(rng, shapes):
    return [rng.normal(0, 1.5, s) for s in shapes]


SHAPES = [(2, 1, 14, 14), (2, 1, 6, 6), (2, 1, 2, 2)]


def test_gan_half_stub_single_scale():
    z = torch.zeros(1, 1, 5, 5, dtype=torch.float64)
    d, g = L.gan_terms([z], [z], [z])
    assert float(d) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert float(g) == pytest.approx(math.log(2), abs=1e-12)


def test_gan_three_identical_scales_triple():
    rng = np.random.default_rng(0)
    r, f = rng.normal(size=(1, 1, 4, 4)), rng.normal(size=(1, 1, 4, 4))
    one = L.gan_terms([torch.tensor(r)], [torch.tensor(f)], [torch.tensor(f)])
    three = L.gan_terms([torch.tensor(r)] * 3, [torch.tensor(f)] * 3, [torch.tensor(f)] * 3)
    assert float(three[0]) == pytest.approx(3 * float(one[0]), rel=1e-12)
    assert float(three[1]) == pytest.approx(3 * float(one[1]), rel=1e-12)
    z = torch.zeros(1, 1, 3, 3, dtype=torch.float64)
    assert float(L.gan_terms([z] * 3, [z] * 3, [z] * 3)[0]) == pytest.approx(6 * math.log(2), abs=1e-12)


def test_gan_random_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        real, fake = rand_maps(rng, SHAPES), rand_maps(rng, SHAPES)
        d, g = L.gan_terms([torch.tensor(x) for x in real], [torch.tensor(x) for x in fake], [torch.tensor(x) for x in fake])
        od, og = gan_oracle(real, fake)
        assert float(d) == pytest.approx(od, abs=1e-6)
        assert float(g) == pytest.approx(og, abs=1e-6)


def test_gan_least_squares_switch():
    rng = np.random.default_rng(2)
    real, fake = rand_maps(rng, SHAPES), rand_maps(rng, SHAPES)
    d, g = L.gan_terms([torch.tensor(x) for x in real], [torch.tensor(x) for x in fake], [torch.tensor(x) for x in fake], "ls")
    od = sum(((np_sigmoid(r) - 1) ** 2).mean() + (np_sigmoid(f) ** 2).mean() for r, f in zip(real, fake))
    og = sum(((np_sigmoid(f) - 1) ** 2).mean() for f in fake)
    assert float(d) == pytest.approx(od, abs=1e-9) and float(g) == pytest.approx(og, abs=1e-9)
    with pytest.raises(ValueError):
        L.gan_terms([], [], [], "hinge")


def test_gan_loss_with_pyramid_detaches_fake_for_d():
    torch.manual_seed(0)
    disc = DiscriminatorPyramid(3 + 2 + 3, 8)
    real = torch.rand(2, 3, 32, 32) * 2 - 1
    fake = (torch.rand(2, 3, 32, 32) * 2 - 1).requires_grad_(True)
    cond, style = torch.rand(2, 2, 32, 32), torch.rand(2, 3, 32, 32)
    loss_d, loss_g = L.gan_loss(disc, real, fake, cond, style)
    loss_d.backward()
    assert fake.grad is None
    loss_g.backward()
    assert fake.grad is not None and fake.grad.abs().sum() > 0


def fm_oracle(real_feats, fake_feats):
    scales = []
    for rs, fs in zip(real_feats, fake_feats):
        scales.append(np.mean([np.abs(f - r).mean() for r, f in zip(rs[:-1], fs[:-1])]))
    return np.mean(scales)


def test_feature_matching_examples_and_oracle():
    rng = np.random.default_rng(3)
    shapes = [[(2, 4, 8, 8), (2, 8, 4, 4), (2, 1, 4, 4)]] * 3
    real = [[rng.normal(size=s) for s in sc] for sc in shapes]
    t = lambda fs: [[torch.tensor(x) for x in sc] for sc in fs]  # noqa: E731
    assert float(L.feature_matching_terms(t(real), t(real))) == 0.0
    plus1 = [[x + 1 for x in sc] for sc in real]
    assert float(L.feature_matching_terms(t(real), t(plus1))) == pytest.approx(1.0, abs=1e-12)
    fake = [[rng.normal(size=s) for s in sc] for sc in shapes]
    assert float(L.feature_matching_terms(t(real), t(fake))) == pytest.approx(fm_oracle(real, fake), abs=1e-6)


def test_feature_matching_no_gradient_into_real_branch():
    real = [[torch.randn(1, 2, 4, 4, requires_grad=True), torch.randn(1, 1, 4, 4)]]
    fake = [[torch.randn(1, 2, 4, 4, requires_grad=True), torch.randn(1, 1, 4, 4)]]
    L.feature_matching_terms(real, fake).backward()
    assert real[0][0].grad is None
    assert fake[0][0].grad is not None


def test_perceptual_examples_and_oracle():
    torch.manual_seed(1)
    net = FeatureNet(8, 3).freeze().double()
    a = torch.rand(2, 3, 16, 16, dtype=torch.float64) * 2 - 1
    b = torch.rand(2, 3, 16, 16, dtype=torch.float64) * 2 - 1
    assert float(L.perceptual_loss(net, a, a)) == 0.0
    assert float(L.perceptual_loss(net, a, b)) == pytest.approx(float(L.perceptual_loss(net, b, a)), abs=1e-12)
    fa = [f.numpy() for f in net(a)]
    fb = [f.numpy() for f in net(b)]
    oracle = sum(np.abs(x - y).mean() / 3 for x, y in zip(fa, fb))
    assert float(L.perceptual_loss(net, a, b)) == pytest.approx(oracle, abs=1e-6)
    w = [0.2, 0.3, 0.5]
    oracle_w = sum(wi * np.abs(x - y).mean() for wi, x, y in zip(w, fa, fb))
    assert float(L.perceptual_loss(net, a, b, w)) == pytest.approx(oracle_w, abs=1e-6)
    with pytest.raises(ValueError):
        L.perceptual_loss(net, a, b, [1.0])


def test_temporal_examples_and_oracle():
    rng = np.random.default_rng(4)
    x = torch.tensor(rng.normal(size=(2, 3, 8, 8)))
    assert float(L.temporal_loss((x, x + 1), (x, x + 1))) == 0.0
    assert float(L.temporal_loss((x, x), (x, x + 1))) == pytest.approx(1.0, abs=1e-12)
    p1, p2, t1, t2 = (rng.normal(size=(2, 3, 8, 8)) for _ in range(4))
    oracle = np.mean(((p2 - p1) - (t2 - t1)) ** 2)
    got = float(L.temporal_loss((torch.tensor(p1), torch.tensor(p2)), (torch.tensor(t1), torch.tensor(t2))))
    assert got == pytest.approx(oracle, abs=1e-9)


def test_temporal_ground_truth_against_itself_is_zero():
    x = torch.randn(4, 3, 8, 8)
    assert float(L.temporal_loss((x[0], x[1]), (x[0], x[1]))) == 0.0


def test_hand_keypoint_half_stub():
    z = torch.zeros(6, dtype=torch.float64)
    d, g = L.hand_keypoint_terms(z, z, z)
    assert float(d) == pytest.approx(2 * math.log(2), abs=1e-12)
    assert float(g) == pytest.approx(math.log(2), abs=1e-12)


def test_hand_keypoint_random_matches_oracle_and_mask():
    rng = np.random.default_rng(5)
    for _ in range(20):
        r, f = rng.normal(size=8), rng.normal(size=8)
        mask = rng.random(8) < 0.7
        mask[0] = True
        d, g = L.hand_keypoint_terms(torch.tensor(r), torch.tensor(f), torch.tensor(f), torch.tensor(mask))
        od = -(np.log(np_sigmoid(r[mask])).mean() + np.log(1 - np_sigmoid(f[mask])).mean())
        og = -np.log(np_sigmoid(f[mask])).mean()
        assert float(d) == pytest.approx(od, abs=1e-6) and float(g) == pytest.approx(og, abs=1e-6)
    none = torch.zeros(4, dtype=torch.bool)
    d, g = L.hand_keypoint_terms(torch.randn(4), torch.randn(4), torch.randn(4), none)
    assert float(d) == 0.0 and float(g) == 0.0


def test_hand_keypoint_loss_gradient_through_keypoint_net():
    torch.manual_seed(2)
    from signgan.networks import HandKeypointNet, KeypointDiscriminator

    h = HandKeypointNet(8).freeze()
    dh = KeypointDiscriminator(16)
    crop = torch.rand(2, 3, 60, 60, requires_grad=True)
    real = torch.rand(2, 21, 2)
    _, g = L.hand_keypoint_loss(dh, h, crop, real)
    g.backward()
    assert crop.grad.abs().sum() > 0
    assert all(p.grad is None for p in h.parameters())


def test_total_loss_identities():
    rng = np.random.default_rng(6)
    comps = {k: float(v) for k, v in zip(["gan_G", "FM", "VGG", "KeyG", "T"], rng.normal(size=5))}
    zero = L.LossWeights(0, 0, 0, 0)
    assert L.total_loss(comps, zero) == comps["gan_G"]
    w = L.LossWeights(*rng.uniform(0, 3, 4))
    base = L.total_loss(comps, w) - comps["gan_G"]
    assert L.total_loss(comps, w.scaled(2.0)) - comps["gan_G"] == pytest.approx(2 * base, abs=1e-12)
    oracle = comps["gan_G"] + w.lambda_FM * comps["FM"] + w.lambda_VGG * comps["VGG"] + w.lambda_Key * comps["KeyG"] + w.lambda_T * comps["T"]
    assert L.total_loss(comps, w) == pytest.approx(oracle, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.lists(st.floats(0, 10), min_size=4, max_size=4))
def test_total_loss_weighted_sum_property(vals, ws):
    comps = dict(zip(["gan_G", "FM", "VGG", "KeyG", "T"], vals))
    w = L.LossWeights(*ws)
    expect = vals[0] + sum(a * b for a, b in zip(ws, vals[1:]))
    assert L.total_loss(comps, w) == pytest.approx(expect, abs=1e-9)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        L.LossWeights(lambda_FM=-1.0)
