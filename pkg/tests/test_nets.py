import numpy as np
import pytest

from gaae import nets
from gaae.errors import ConfigError, DimensionError, ValidationError
from gaae.grad import Tape, Tensor, backward
from gaae.grad import ops


CFG = nets.NetConfig(ch=4, latent_dim=8, n_classes=3, bins=32, frames=16)


def _rng():
    return np.random.default_rng(777)


def _x(rng, n=2, cfg=CFG):
    return Tensor(rng.normal(size=(n, 1, cfg.bins, cfg.frames)) * 0.4)


# ---------------------------------------------------------------- config

def test_config_derives_depth_and_ladders():
    paper = nets.NetConfig(ch=16, latent_dim=128, n_classes=10, bins=256, frames=128)
    assert paper.depth == 6
    assert paper.gen_mults == [16, 16, 16, 16, 16, 1]
    assert paper.disc_mults == [1, 1, 2, 4, 8, 16]
    desk = nets.NetConfig(ch=8, latent_dim=128, n_classes=3, bins=64, frames=32)
    assert desk.depth == 4
    assert desk.gen_mults == [4, 4, 4, 1]
    assert desk.disc_mults == [1, 1, 2, 4]


def test_config_rejects_bad_shapes():
    with pytest.raises(ConfigError):
        nets.NetConfig(bins=60, frames=32)
    with pytest.raises(ConfigError):
        nets.NetConfig(bins=64, frames=64)
    with pytest.raises(ConfigError):
        nets.NetConfig(n_classes=1)
    with pytest.raises(ConfigError):
        nets.NetConfig(latent_dim=0)


# ---------------------------------------------------------------- blocks

def test_up_block_doubles_spatial_dims():
    rng = _rng()
    blk = nets.UpBlock(rng, 6, 4, n_classes=3)
    x = Tensor(rng.normal(size=(2, 6, 4, 2)))
    y = Tensor(nets.one_hot([0, 2], 3))
    out = blk(x, y)
    assert out.data.shape == (2, 4, 8, 4)


def test_down_block_halves_spatial_dims():
    rng = _rng()
    blk = nets.DownBlock(rng, 3, 5)
    out = blk(Tensor(rng.normal(size=(2, 3, 8, 4))))
    assert out.data.shape == (2, 5, 4, 2)


def test_up_block_zero_main_path_equals_shortcut():
    rng = _rng()
    blk = nets.UpBlock(rng, 3, 3, n_classes=2)
    blk.eval()          # freeze the power-iteration buffers for the comparison
    blk.conv1.w.data[...] = 0.0
    blk.conv1.b.data[...] = 0.0
    blk.conv2.w.data[...] = 0.0
    blk.conv2.b.data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 3, 4, 2)))
    y = Tensor(nets.one_hot([0, 1], 2))
    out = blk(x, y)
    sc = blk.conv_sc(ops.resample(x, "up2"))
    assert np.array_equal(out.data, sc.data)


def test_down_block_zero_main_path_equals_shortcut():
    rng = _rng()
    blk = nets.DownBlock(rng, 3, 4)
    blk.conv1.w.data[...] = 0.0
    blk.conv1.b.data[...] = 0.0
    blk.conv2.w.data[...] = 0.0
    blk.conv2.b.data[...] = 0.0
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    out = blk(x)
    sc = ops.resample(blk.conv_sc(x), "down2")
    assert np.array_equal(out.data, sc.data)


def test_nonlocal_block_shape_and_identity():
    rng = _rng()
    blk = nets.NonLocalBlock(rng, 8)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    out = blk(x)
    assert out.data.shape == x.data.shape
    # zero-initialized output projection -> exact identity
    assert np.array_equal(out.data, x.data)


def test_nonlocal_attention_rows_sum_to_one():
    rng = _rng()
    blk = nets.NonLocalBlock(rng, 8)
    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    attn = blk.attention(x)
    assert np.abs(attn.data.sum(axis=-1) - 1.0).max() < 1e-9


# ---------------------------------------------------------------- encoder

def test_encoder_output_shapes_paper_scale():
    cfg = nets.NetConfig(ch=2, latent_dim=128, n_classes=10, bins=256, frames=128)
    enc = nets.Encoder(_rng(), cfg)
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, size=(2, 1, 256, 128)))
    zg, zs = enc(x)
    assert zg.data.shape == (2, 128)
    assert zs.data.shape == (2, 128)


def test_encoder_deterministic_and_heads_differ():
    enc = nets.Encoder(_rng(), CFG)
    x = _x(np.random.default_rng(5))
    zg1, zs1 = enc(x)
    zg2, zs2 = enc(x)
    assert np.array_equal(zg1.data, zg2.data)
    assert np.array_equal(zs1.data, zs2.data)
    cos = (zg1.data * zs1.data).sum() / (
        np.linalg.norm(zg1.data) * np.linalg.norm(zs1.data))
    assert abs(cos) < 0.99


def test_encoder_rejects_wrong_shape():
    enc = nets.Encoder(_rng(), CFG)
    with pytest.raises(DimensionError):
        enc(Tensor(np.zeros((2, 1, 16, 16))))


def test_encoder_trunk_has_no_spectral_norm():
    enc = nets.Encoder(_rng(), CFG)
    assert not any(name.endswith(".u") for name in enc.buffers())


# ---------------------------------------------------------------- classifier

def test_classifier_probabilities_sum_to_one():
    clf = nets.Classifier(_rng(), CFG)
    z = Tensor(np.random.default_rng(1).normal(size=(6, CFG.latent_dim)))
    p = clf.classify(z)
    assert np.abs(p.data.sum(axis=1) - 1.0).max() < 1e-9


def test_classifier_zero_weights_uniform():
    clf = nets.Classifier(_rng(), CFG)
    for p in clf.parameters().values():
        p.data[...] = 0.0
    z = Tensor(np.ones((2, CFG.latent_dim)))
    p = clf.classify(z)
    assert np.allclose(p.data, 1.0 / CFG.n_classes)


def test_classifier_argmax_scale_invariant():
    clf = nets.Classifier(_rng(), CFG)
    z = Tensor(np.random.default_rng(2).normal(size=(4, CFG.latent_dim)))
    logits = clf(z).data
    p1 = np.argmax(logits, axis=1)
    scaled = nets.ops.softmax(Tensor(logits * 7.3)).data
    assert np.array_equal(np.argmax(scaled, axis=1), p1)


# ---------------------------------------------------------------- decoder

def test_decoder_output_shape_and_range():
    dec = nets.Decoder(_rng(), CFG)
    rng = np.random.default_rng(3)
    z = Tensor(rng.normal(size=(4, CFG.latent_dim)))
    y = Tensor(nets.one_hot([0, 1, 2, 0], 3))
    out = dec(z, y)
    assert out.data.shape == (4, 1, CFG.bins, CFG.frames)
    assert np.abs(out.data).max() < 1.0


def test_decoder_paper_scale_shape():
    cfg = nets.NetConfig(ch=2, latent_dim=16, n_classes=10, bins=256, frames=128)
    dec = nets.Decoder(_rng(), cfg)
    z = Tensor(np.random.default_rng(0).normal(size=(1, 16)))
    y = Tensor(nets.one_hot([7], 10))
    assert dec(z, y).data.shape == (1, 1, 256, 128)


def test_decoder_rejects_malformed_condition():
    dec = nets.Decoder(_rng(), CFG)
    z = Tensor(np.zeros((2, CFG.latent_dim)))
    with pytest.raises(ValidationError):
        dec(z, Tensor(np.full((2, 3), 0.5)))


def test_decoder_condition_only_through_cbn():
    dec = nets.Decoder(_rng(), CFG).eval()
    # flatten every class embedding to the same row -> y-invariance
    for name, p in dec.parameters().items():
        if "gamma_table" in name or "beta_table" in name:
            p.data[...] = p.data[0]
    z = Tensor(np.random.default_rng(4).normal(size=(2, CFG.latent_dim)))
    out0 = dec(z, Tensor(nets.one_hot([0, 0], 3)))
    out1 = dec(z, Tensor(nets.one_hot([2, 1], 3)))
    assert np.array_equal(out0.data, out1.data)


def test_decoder_condition_changes_output():
    dec = nets.Decoder(_rng(), CFG).eval()
    # nudge the embeddings apart (fresh init starts with identical rows)
    rng = np.random.default_rng(8)
    for name, p in dec.parameters().items():
        if "gamma_table" in name or "beta_table" in name:
            p.data += rng.normal(scale=0.3, size=p.data.shape)
    z = Tensor(rng.normal(size=(2, CFG.latent_dim)))
    out0 = dec(z, Tensor(nets.one_hot([0, 0], 3)))
    out1 = dec(z, Tensor(nets.one_hot([1, 1], 3)))
    assert np.linalg.norm(out0.data - out1.data) > 0


def test_decoder_upblock_convs_are_spectrally_normalized():
    dec = nets.Decoder(_rng(), CFG)
    for i, blk in enumerate(dec.blocks):
        assert blk.conv1.sn and blk.conv2.sn and blk.conv_sc.sn
    assert not dec.conv_out.sn     # final conv row carries no SN mark


# ---------------------------------------------------------------- discriminators

def test_sample_disc_zero_embedding_ignores_condition():
    disc = nets.SampleDiscriminator(_rng(), CFG)
    disc.embed.data[...] = 0.0
    rng = np.random.default_rng(6)
    x = _x(rng)
    s0 = disc(x, Tensor(nets.one_hot([0, 1], 3)))
    s1 = disc(x, Tensor(nets.one_hot([2, 0], 3)))
    assert np.array_equal(s0.data, s1.data)


def test_sample_disc_scores_finite_and_shape():
    disc = nets.SampleDiscriminator(_rng(), CFG)
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(-1, 1, size=(3, 1, CFG.bins, CFG.frames)))
    s = disc(x, Tensor(nets.one_hot([0, 1, 2], 3)))
    assert s.data.shape == (3,)
    assert np.all(np.isfinite(s.data))


def test_sample_disc_gradient_reaches_embedding_and_trunk():
    disc = nets.SampleDiscriminator(_rng(), CFG)
    rng = np.random.default_rng(9)
    x = _x(rng)
    y = Tensor(nets.one_hot([0, 1], 3))
    with Tape() as tape:
        loss = ops.tsum(disc(x, y))
    backward(loss, tape=tape)
    assert disc.embed.grad is not None and np.abs(disc.embed.grad).max() > 0
    first_conv_w = disc.trunk.blocks[0].conv1.w
    assert first_conv_w.grad is not None and np.abs(first_conv_w.grad).max() > 0


def test_sample_disc_misaligned_batch_rejected():
    disc = nets.SampleDiscriminator(_rng(), CFG)
    x = Tensor(np.zeros((2, 1, CFG.bins, CFG.frames)))
    with pytest.raises(DimensionError):
        disc(x, Tensor(nets.one_hot([0], 3)))


def test_latent_disc_contract():
    ld = nets.LatentDiscriminator(_rng(), CFG)
    rng = np.random.default_rng(10)
    z = Tensor(rng.normal(size=(5, CFG.latent_dim)))
    s1, s2 = ld(z), ld(z)
    assert np.array_equal(s1.data, s2.data)
    assert s1.data.shape == (5,)
    assert np.all(np.isfinite(s1.data))
    for p in ld.parameters().values():
        p.data[...] = 0.0
    assert np.array_equal(ld(z).data, np.zeros(5))


# ---------------------------------------------------------------- plumbing

def test_build_is_deterministic_per_seed():
    cfg = CFG
    m1 = nets.GaaeModels.build(np.random.default_rng(42), cfg)
    m2 = nets.GaaeModels.build(np.random.default_rng(42), cfg)
    p1, p2 = m1.parameters(), m2.parameters()
    assert p1.keys() == p2.keys()
    for k in p1:
        assert np.array_equal(p1[k].data, p2[k].data), k


def test_parameter_names_are_prefixed():
    m = nets.GaaeModels.build(np.random.default_rng(0), CFG)
    names = set(m.parameters())
    assert any(n.startswith("encoder.trunk.blocks.0.conv1.w") for n in names)
    assert any(n.startswith("decoder.fc.") for n in names)
    assert "sample_disc.embed" in names


def test_orthogonal_init_is_orthogonal():
    rng = _rng()
    w = nets.orthogonal(rng, (16, 16))
    assert np.allclose(w @ w.T, np.eye(16), atol=1e-10)
    wide = nets.orthogonal(rng, (4, 32))
    assert np.allclose(wide @ wide.T, np.eye(4), atol=1e-10)
    conv = nets.orthogonal(rng, (8, 4, 3, 3))
    flat = conv.reshape(8, -1)
    assert np.allclose(flat @ flat.T, np.eye(8), atol=1e-10)


def test_one_hot_helper():
    y = nets.one_hot([2, 0], 3)
    assert np.array_equal(y, [[0, 0, 1], [1, 0, 0]])
    with pytest.raises(DimensionError):
        nets.one_hot([3], 3)
