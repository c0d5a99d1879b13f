import numpy as np
import pytest
import torch

from signgan import losses as L
from signgan.networks import (
    ConfigError,
    DiscriminatorPyramid,
    FeatureNet,
    HandKeypointNet,
    KeypointDiscriminator,
    UNetGenerator,
)
from signgan.pose import PoseSequence, default_layout, rasterize_heatmap
from signgan.pose2video import (
    Clip,
    ClipDataset,
    Pose2VideoConfig,
    Pose2VideoTrainer,
    PreconditionError,
    TrainingDivergedError,
    build_models,
    crop_hands_tensor,
    finetune_style,
    frame_to_uint8,
    generate_frame,
    generate_video,
    write_log_csv,
)
from signgan.synthdata import make_styles, make_vocabulary, render_signer_rgb, sequence_from_tokens, style_image, to_frame

LAYOUT = default_layout()
RES = 32


@pytest.fixture(scope="module")
def tiny():
    vocab = make_vocabulary(4, 0, LAYOUT, 4)
    seq = sequence_from_tokens([0, 1, 2], vocab, LAYOUT)
    styles = make_styles(2, 0)
    clips = []
    for st in styles:
        frames = np.stack([render_signer_rgb(f, st, (RES, RES), LAYOUT) for f in seq.frames])
        clips.append(Clip(seq, frames, st.style_id))
    simgs = np.stack([style_image(st, (RES, RES), LAYOUT) for st in styles])
    return seq, clips, simgs, styles


def tiny_models(cfg, handnet=True):
    torch.manual_seed(123)
    h = HandKeypointNet(8) if handnet else None
    return build_models(cfg, LAYOUT.n_limbs, h, FeatureNet(4, 2), n_styles=2)


def cfg(**kw):
    base = dict(resolution=RES, ngf=8, ndf=8, batch_pairs=2, steps=3, log_every=0)
    base.update(kw)
    return Pose2VideoConfig(**base)


def test_generator_shapes_range_and_determinism():
    torch.manual_seed(0)
    g = UNetGenerator(LAYOUT.n_limbs, 3, 8, 4, RES).eval()
    c = torch.rand(2, LAYOUT.n_limbs, RES, RES)
    s = torch.rand(2, 3, RES, RES) * 2 - 1
    a, b = g(c, s), g(c, s)
    assert a.shape == (2, 3, RES, RES)
    assert torch.equal(a, b)
    big = g(c * 1e4, s * 1e4)
    assert big.abs().max() <= 1.0


def test_generator_shape_mismatch():
    g = UNetGenerator(LAYOUT.n_limbs, 3, 8, 4, RES)
    with pytest.raises(ConfigError):
        g(torch.zeros(1, 5, RES, RES), torch.zeros(1, 3, RES, RES))
    with pytest.raises(ConfigError):
        g(torch.zeros(1, LAYOUT.n_limbs, 16, 16), torch.zeros(1, 3, 16, 16))
    with pytest.raises(ConfigError):
        UNetGenerator(4, 3, 8, 4, 40)


def test_skip_diagnostic_changes_output_and_cond_gradient():
    torch.manual_seed(1)
    g = UNetGenerator(LAYOUT.n_limbs, 3, 8, 4, RES).eval()
    c = torch.rand(1, LAYOUT.n_limbs, RES, RES, requires_grad=True)
    s = torch.rand(1, 3, RES, RES)
    out = g(c, s)
    out.sum().backward()
    assert c.grad.abs().sum() > 0
    g.skip_scale = 0.0
    with torch.no_grad():
        assert (g(c, s) - out).abs().mean() > 0
    assert len(g.up) == g.n_layers - 1


def test_pyramid_requires_three_scales():
    d = DiscriminatorPyramid(8, 8)
    assert len(d.scales) == 3
    with pytest.raises(ConfigError):
        DiscriminatorPyramid(8, 8, n_scales=2)
    out = d(torch.rand(1, 3, RES, RES), torch.rand(1, 2, RES, RES), torch.rand(1, 3, RES, RES))
    assert len(out) == 3 and all(len(o) >= 2 for o in out)


def test_keypoint_net_differentiable_and_shape():
    torch.manual_seed(2)
    h = HandKeypointNet(8).freeze()
    x = torch.rand(1, 3, 60, 60, requires_grad=True)
    k = h(x)
    assert k.shape == (1, 21, 2)
    k[0, 5, 0].backward()
    assert x.grad.abs().sum() > 0
    with pytest.raises(ConfigError):
        h(torch.rand(1, 3, 50, 50))


def test_keypoint_disc_best_response_on_identical_distributions():
    torch.manual_seed(3)
    dh = KeypointDiscriminator(32)
    opt = torch.optim.Adam(dh.parameters(), lr=1e-3)
    g = torch.Generator().manual_seed(0)
    for _ in range(400):
        real = torch.rand(64, 21, 2, generator=g)
        fake = torch.rand(64, 21, 2, generator=g)
        d, _ = L.hand_keypoint_terms(dh(real), dh(fake), dh(fake))
        opt.zero_grad()
        d.backward()
        opt.step()
    probe = torch.rand(512, 21, 2, generator=g)
    out = torch.sigmoid(dh(probe)).detach()
    assert abs(out.mean().item() - 0.5) <= 0.05


def test_crop_hands_tensor_matches_numpy_crop():
    from signgan.pose import crop_patch

    rng = np.random.default_rng(4)
    img = rng.uniform(-1, 1, (2, 3, RES, RES)).astype(np.float32)
    anchors = np.array([[[3, 5], [20, 30]], [[31, 0], [16, 16]]])
    bg = (0.1, -0.2, 0.3)
    crops = crop_hands_tensor(torch.from_numpy(img), anchors, bg).numpy()
    for i in range(2):
        for k in range(2):
            np.testing.assert_allclose(crops[2 * i + k], crop_patch(img[i], tuple(anchors[i, k]), bg), atol=1e-6)


def test_generate_video_composition(tiny):
    seq, clips, simgs, _ = tiny
    torch.manual_seed(5)
    g = UNetGenerator(LAYOUT.n_limbs, 3, 8, 4, RES)
    one = PoseSequence.from_frames([seq[3]], LAYOUT)
    vid = generate_video(g, one, simgs[0])
    assert len(vid) == 1
    hm = rasterize_heatmap(seq[3], LAYOUT, (RES, RES))
    np.testing.assert_array_equal(vid[0], generate_frame(g, hm, simgs[0]))
    const = PoseSequence.from_frames([seq[2]] * 5, LAYOUT)
    frames = generate_video(g, const, simgs[1])
    assert all(np.array_equal(frames[0], f) for f in frames)
    assert len(generate_video(g, seq, simgs[0])) == len(seq)


def test_frame_to_uint8_roundtrip():
    x = np.random.default_rng(6).integers(0, 256, (RES, RES, 3)).astype(np.uint8)
    np.testing.assert_array_equal(frame_to_uint8(to_frame(x)), x)


def test_training_zero_lr_and_identical_logs(tiny, tmp_path):
    _, clips, simgs, _ = tiny
    data = ClipDataset(clips, simgs, LAYOUT)
    m = tiny_models(cfg(lr_g=0.0, lr_d=0.0))
    before = {k: v.clone() for k, v in m.gen.state_dict().items()}
    dbefore = {k: v.clone() for k, v in m.disc.state_dict().items()}
    Pose2VideoTrainer(m, data, cfg(lr_g=0.0, lr_d=0.0)).train()
    for k, v in m.gen.state_dict().items():
        assert torch.equal(v, before[k])
    for k, v in m.disc.state_dict().items():
        assert torch.equal(v, dbefore[k])
    rows = [Pose2VideoTrainer(tiny_models(cfg()), data, cfg()).train() for _ in range(2)]
    assert rows[0] == rows[1]
    write_log_csv(rows[0], tmp_path / "log.csv")
    header = (tmp_path / "log.csv").read_text().splitlines()[0]
    assert header == "step,loss_D,loss_G,loss_FM,loss_VGG,loss_KeyG,loss_KeyD,loss_T"


def test_key_loss_alone_reaches_generator_not_keypoint_net(tiny):
    _, clips, simgs, _ = tiny
    c = cfg(lambda_FM=0, lambda_VGG=0, lambda_T=0, lambda_Key=1.0, lr_d=0.0, good_hands=False, steps=1)
    m = tiny_models(c)
    h_before = {k: v.clone() for k, v in m.handnet.state_dict().items()}
    g_before = {k: v.clone() for k, v in m.gen.state_dict().items()}
    tr = Pose2VideoTrainer(m, ClipDataset(clips, simgs, LAYOUT), c)
    # isolate the hand term: silence the image GAN gradient by zeroing its share
    orig = L.gan_terms

    def no_gan(real, fd, f, mode="log"):
        d, g = orig(real, fd, f, mode)
        return d, g * 0.0

    L.gan_terms = no_gan
    try:
        tr.train()
    finally:
        L.gan_terms = orig
    assert any(not torch.equal(v, g_before[k]) for k, v in m.gen.state_dict().items())
    for k, v in m.handnet.state_dict().items():
        assert torch.equal(v, h_before[k])


def test_patch_and_none_variants_run(tiny):
    _, clips, simgs, _ = tiny
    data = ClipDataset(clips, simgs, LAYOUT)
    for variant in ("patch", "none"):
        rows = Pose2VideoTrainer(tiny_models(cfg(hand_loss=variant), handnet=False), data, cfg(hand_loss=variant)).train()
        assert len(rows) == 3
        if variant == "none":
            assert all(r["loss_KeyD"] == 0.0 for r in rows)


def test_good_hand_branches(tiny):
    _, clips, simgs, _ = tiny
    data = ClipDataset(clips, simgs, LAYOUT)
    good = np.random.default_rng(7).uniform(0.3, 0.7, (10, 21, 2))
    for branch in ("real", "fake"):
        c = cfg(good_hands_branch=branch)
        rows = Pose2VideoTrainer(tiny_models(c), data, c, good_hands=good).train()
        assert np.isfinite(rows[-1]["loss_KeyD"])


def test_keypoint_loss_needs_handnet():
    with pytest.raises(PreconditionError):
        tiny_models(cfg(), handnet=False)


def test_controllable_off_ignores_style(tiny):
    _, clips, simgs, _ = tiny
    c = cfg(controllable=False, steps=2)
    m = tiny_models(c)
    Pose2VideoTrainer(m, ClipDataset(clips, simgs, LAYOUT), c).train()
    hm = rasterize_heatmap(clips[0].poses[0], LAYOUT, (RES, RES))
    a = generate_frame(m.gen, hm, simgs[0], controllable=False)
    b = generate_frame(m.gen, hm, simgs[1], controllable=False)
    np.testing.assert_array_equal(a, b)


def test_nan_names_the_loss_term(tiny):
    _, clips, simgs, _ = tiny
    bad = [Clip(clips[0].poses, clips[0].frames, 0)]
    data = ClipDataset(bad, simgs.copy(), LAYOUT)
    data.style_images[:] = np.nan
    c = cfg()
    with pytest.raises(TrainingDivergedError, match="loss_D"):
        Pose2VideoTrainer(tiny_models(c), data, c).train()


def test_finetune_preconditions_and_zero_steps(tiny):
    seq, clips, simgs, styles = tiny
    c = cfg()
    m = tiny_models(c)
    with pytest.raises(PreconditionError):
        finetune_style(m, [], simgs[0], c)
    before = {k: v.clone() for k, v in m.gen.state_dict().items()}
    ex = [(seq[i], clips[0].frames[i]) for i in range(3)]
    finetune_style(m, ex, simgs[0], c, steps=0)
    for k, v in m.gen.state_dict().items():
        assert torch.equal(v, before[k])
    finetune_style(m, ex, simgs[1], c, steps=2)
    assert any(not torch.equal(v, before[k]) for k, v in m.gen.state_dict().items())
    single = tiny_models(c)
    single.n_styles = 1
    with pytest.raises(PreconditionError):
        finetune_style(single, ex, simgs[0], c, steps=1)


def test_negative_weight_is_config_error():
    with pytest.raises(ValueError):
        cfg(lambda_T=-1.0)
