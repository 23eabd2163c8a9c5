from pathlib import Path

import numpy as np
import pytest

from latentdecode.dataio import read_matrix
from latentdecode.errors import NonFiniteValue, ShapeMismatch, Unsupported
from latentdecode.gradopt import finite_diff_grad
from latentdecode.oracle import (
    GeneratorOracle,
    GeneratorSpec,
    ToyFeatureExtractor,
    ToyGenerator,
    join_noise,
    split_noise,
)

DATA = Path(__file__).parent / "data"


def latents(spec, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(spec.h_dim), rng.standard_normal(spec.z_dim)


# -- spec ------------------------------------------------------------------------------

def test_spec_dims():
    s = GeneratorSpec.toy()
    assert s.z_dim == s.levels * s.level_dim and s.tail_dim == 30
    p = GeneratorSpec.paper_scale()
    assert (p.z_dim, p.level_dim, p.tail_dim, p.dense_dim) == (119, 17, 102, 24576)
    with pytest.raises(ValueError):
        GeneratorSpec(z_dim=34)
    with pytest.raises(ValueError):
        GeneratorSpec(embed_dim=0)


def test_split_join(spec):
    z = np.arange(35.0)
    head, tail = split_noise(z, spec)
    assert head.shape == (5,) and tail.shape == (30,)
    np.testing.assert_array_equal(join_noise(head, tail), z)
    with pytest.raises(ShapeMismatch):
        split_noise(np.zeros(34), spec)


# -- generator -------------------------------------------------------------------------

def test_dense_layer_at_zero(gen, spec):
    d0 = gen.dense_layer(np.zeros(spec.level_dim))
    np.testing.assert_array_equal(d0, np.tanh(gen.bd))
    assert np.array_equal(d0, gen.dense_layer(np.zeros(spec.level_dim)))
    assert np.array_equal(gen.generate(*latents(spec, 0)), ToyGenerator(spec, seed=0).generate(*latents(spec, 0)))


def test_preactivation_is_affine(gen, spec):
    u = np.random.default_rng(1).standard_normal(spec.level_dim)
    pre = gen.dense_preactivation
    np.testing.assert_allclose(pre(2 * u) - pre(0 * u), 2 * (pre(u) - pre(0 * u)), atol=1e-12)


def test_override_identity(gen, spec):
    rng = np.random.default_rng(2)
    for _ in range(100):
        h, z = rng.standard_normal(spec.h_dim), rng.standard_normal(spec.z_dim)
        head, tail = split_noise(z, spec)
        assert np.array_equal(gen.generate(h, z), gen.generate_from_dense(h, tail, gen.dense_layer(head)))


def test_golden_image(gen, spec):
    rng = np.random.default_rng(2024)
    h, z = rng.standard_normal(spec.h_dim), rng.standard_normal(spec.z_dim)
    golden = read_matrix(DATA / "toy_golden.ldm").astype(np.float64).reshape(spec.image_shape)
    assert np.abs(gen.generate(h, z) - golden).max() < 1e-6


def test_image_range_and_shape(gen, spec):
    h, z = latents(spec, 3)
    img = gen.generate(h, z)
    assert img.shape == spec.image_shape
    assert img.min() >= 0 and img.max() <= 1
    _, tail = split_noise(z, spec)
    zero = gen.generate_from_dense(h, tail, np.zeros(spec.dense_dim))
    assert zero.min() >= 0 and zero.max() <= 1


def test_unit_norm_h_changes_image(gen, spec):
    h, z = latents(spec, 4)
    assert not np.allclose(gen.generate(h, z), gen.generate(h / np.linalg.norm(h), z))


def test_every_dense_unit_matters(gen, spec):
    h, z = latents(spec, 5)
    head, tail = split_noise(z, spec)
    d = gen.dense_layer(head)
    bumped = d + 1e-3 * np.eye(spec.dense_dim)
    imgs = gen.generate_from_dense(h, tail, bumped)
    change = np.abs(imgs - gen.generate_from_dense(h, tail, d)).max(axis=(1, 2, 3))
    assert np.all(change > 0)


def test_batch_matches_single(gen, spec):
    rng = np.random.default_rng(6)
    H, Z = rng.standard_normal((4, spec.h_dim)), rng.standard_normal((4, spec.z_dim))
    batch = gen.generate(H, Z)
    for i in range(4):
        np.testing.assert_allclose(batch[i], gen.generate(H[i], Z[i]), atol=1e-14)
    # one h broadcast against a population of z
    pop = gen.generate(H[0], Z)
    np.testing.assert_allclose(pop[2], gen.generate(H[0], Z[2]), atol=1e-14)


def test_generator_input_errors(gen, spec):
    h, z = latents(spec, 7)
    with pytest.raises(ShapeMismatch):
        gen.generate(h[:-1], z)
    with pytest.raises(ShapeMismatch):
        gen.dense_layer(np.zeros(4))
    bad = z.copy()
    bad[0] = np.nan
    with pytest.raises(NonFiniteValue):
        gen.generate(h, bad)


def test_lipschitz_in_z(gen, spec):
    rng = np.random.default_rng(8)
    for _ in range(10):
        h, z = rng.standard_normal(spec.h_dim), rng.standard_normal(spec.z_dim)
        delta = rng.standard_normal(spec.z_dim)
        delta *= 1e-6 / np.linalg.norm(delta)
        assert np.abs(gen.generate(h, z + delta) - gen.generate(h, z)).max() <= 1e-2


def _vjp_case(gen, spec, seed):
    rng = np.random.default_rng(seed)
    h, z = rng.standard_normal(spec.h_dim), rng.standard_normal(spec.z_dim)
    head, tail = split_noise(z, spec)
    d = gen.dense_layer(head) + 0.1 * rng.standard_normal(spec.dense_dim)
    cog = rng.standard_normal(spec.image_shape)
    return h, tail, d, cog


def test_vjp_matches_finite_differences(gen, spec):
    h, tail, d, cog = _vjp_case(gen, spec, 9)
    analytic = gen.vjp_dense(h, tail, d, cog)
    numeric = finite_diff_grad(lambda v: np.sum(gen.generate_from_dense(h, tail, v) * cog), d, 1e-5)
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-4


def test_vjp_linear_in_cogradient(gen, spec):
    h, tail, d, u = _vjp_case(gen, spec, 10)
    v = np.random.default_rng(11).standard_normal(spec.image_shape)
    a, b = 0.7, -2.5
    lhs = gen.vjp_dense(h, tail, d, a * u + b * v)
    rhs = a * gen.vjp_dense(h, tail, d, u) + b * gen.vjp_dense(h, tail, d, v)
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-8)
    assert np.all(gen.vjp_dense(h, tail, d, np.zeros(spec.image_shape)) == 0)
    with pytest.raises(ShapeMismatch):
        gen.vjp_dense(h, tail, d, np.zeros((4, 4, 3)))


def test_base_oracle_declines_vjp(spec):
    class Bare(GeneratorOracle):
        def __init__(self):
            self.spec = spec

        def dense_layer(self, z_head):
            return np.zeros(spec.dense_dim)

        def generate_from_dense(self, h, z_tail, d):
            return np.zeros(spec.image_shape)

    with pytest.raises(Unsupported):
        Bare().vjp_dense(None, None, None, None)
    assert Bare().describe()["kind"] == "Bare"


def test_describe(gen):
    info = gen.describe()
    assert info["kind"] == "toy" and info["arch_version"] == ToyGenerator.ARCH_VERSION


def test_bad_geometry():
    with pytest.raises(ValueError):
        ToyGenerator(GeneratorSpec(image_size=24))
    with pytest.raises(ValueError):
        ToyGenerator(GeneratorSpec(dense_h=2, dense_w=4))


# -- feature extractor ------------------------------------------------------------------

def test_features_deterministic_and_finite(feat, gen, spec):
    img = gen.generate(*latents(spec, 12))
    assert np.array_equal(feat.instance_features(img), feat.instance_features(img))
    assert np.array_equal(feat.mid_features(img), feat.mid_features(img))
    assert feat.instance_features(img).shape == (spec.h_dim,)
    assert np.all(np.isfinite(feat.instance_features(np.zeros(spec.image_shape))))
    assert np.all(np.isfinite(feat.instance_features(np.ones(spec.image_shape))))


def test_gray_and_white_differ(feat, spec):
    gray = feat.instance_features(np.full(spec.image_shape, 0.5))
    white = feat.instance_features(np.ones(spec.image_shape))
    assert np.abs(gray - white).max() > 1e-3


def test_mid_features_are_spatial_and_shift_sensitive(feat, gen, spec):
    img = gen.generate(*latents(spec, 13))
    m = feat.mid_features(img)
    assert m.ndim == 3 and m.shape[1] > 1 and m.shape[2] > 1
    shifted = np.roll(img, 4, axis=1)
    assert not np.allclose(feat.mid_features(shifted), m)
    assert np.sum((feat.mid_features(img) - m) ** 2) == 0


def test_multi_layer_features(feat, gen, spec):
    a = feat.multi_layer_features(gen.generate(*latents(spec, 14)))
    b = feat.multi_layer_features(np.full(spec.image_shape, 0.3))
    assert len(a) == len(b) >= 2
    assert [x.shape for x in a] == [x.shape for x in b]
    np.testing.assert_array_equal(a[feat.MID_LAYER], feat.mid_features(gen.generate(*latents(spec, 14))))


def test_feature_vjps(feat, gen, spec):
    rng = np.random.default_rng(15)
    img = gen.generate(*latents(spec, 15))
    cog = rng.standard_normal(feat.mid_features(img).shape)
    analytic = feat.vjp_mid(img, cog)
    numeric = finite_diff_grad(lambda x: np.sum(feat.mid_features(x) * cog), img, 1e-5)
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-6

    cogs = [rng.standard_normal(f.shape) for f in feat.multi_layer_features(img)]
    analytic = feat.vjp_multi_layer(img, cogs)
    f = lambda x: sum(np.sum(a * c) for a, c in zip(feat.multi_layer_features(x), cogs))
    numeric = finite_diff_grad(f, img, 1e-5)
    assert np.abs(analytic - numeric).max() / np.abs(numeric).max() < 1e-6
    with pytest.raises(ShapeMismatch):
        feat.vjp_multi_layer(img, cogs[:2])


def test_extractor_input_errors(feat):
    with pytest.raises(ShapeMismatch):
        feat.mid_features(np.zeros((16, 16, 3)))
    with pytest.raises(ValueError):
        ToyFeatureExtractor(image_size=30)
