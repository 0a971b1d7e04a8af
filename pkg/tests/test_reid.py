import numpy as np
import pytest

from herdtrack.masks import BitMask, crop
from herdtrack.reid import (ReferenceEmbedder, ReidConfig, build_cost_matrix, centroid_similarity,
                            cosine_similarity, embed_instances, enhance_crop, equalize_nonzero,
                            gamma_correct, reidentify, resize_area)
from herdtrack.spatial import Instance

from conftest import disk, rect


def scene(centres, grays, h=60, w=80, r=5):
    img = np.full((h, w), 30, np.uint8)
    insts = []
    for k, ((cx, cy), g) in enumerate(zip(centres, grays)):
        m = disk(h, w, cx, cy, r)
        img[m.to_array()] = g
        insts.append(Instance(m, 1.0, identity=k))
    return img, insts


# --- config ------------------------------------------------------------------------

def test_weights_normalised_and_validated():
    cfg = ReidConfig(alpha=1, beta=1, gamma_w=2)
    assert (cfg.alpha, cfg.beta, cfg.gamma_w) == (0.25, 0.25, 0.5)
    for bad in ({"alpha": -1}, {"alpha": 0, "beta": 0, "gamma_w": 0}, {"d_max": 0}, {"gamma_correction": 0}):
        with pytest.raises(ValueError):
            ReidConfig(**bad)


# --- enhancement ---------------------------------------------------------------------

def test_gamma_half_maps_quarter_to_half():
    assert gamma_correct(np.array([0.25]), 0.5)[0] == pytest.approx(0.5)


def test_identity_gamma_on_uniform_histogram_is_unchanged():
    img = np.arange(1, 256, dtype=np.uint8).reshape(15, 17)
    out = enhance_crop(img, ReidConfig(gamma_correction=1.0))
    assert np.allclose(out, img / 255.0, atol=1 / 128)


def test_constant_crop_maps_to_itself():
    img = np.zeros((6, 6), np.uint8)
    img[1:5, 1:5] = 128
    out = equalize_nonzero(img)
    assert np.allclose(out[1:5, 1:5], 128 / 255) and out[0].sum() == 0


def test_equalisation_keeps_background_zero_and_range():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (20, 20)).astype(np.uint8)
    out = enhance_crop(img)
    assert out.min() >= 0 and out.max() <= 1
    assert np.all(out[img == 0] == 0)
    with pytest.raises(ValueError):
        enhance_crop(np.zeros((0, 3)))


def test_resize_area_preserves_mean_and_constants():
    rng = np.random.default_rng(1)
    img = rng.random((37, 23))
    small = resize_area(img, 32, 32)
    assert small.shape == (32, 32)
    assert small.mean() == pytest.approx(img.mean(), rel=0.05)
    assert np.allclose(resize_area(np.full((9, 5), 0.3), 4, 4), 0.3)


# --- embedding and similarities ---------------------------------------------------------

def test_reference_embedder_dimension_and_determinism():
    emb = ReferenceEmbedder()
    img = np.random.default_rng(2).random((20, 30))
    a, b = emb(img), emb(img)
    assert emb.dim == 1040 and a.shape == (1040,)
    assert np.array_equal(a, b) and cosine_similarity(a, b) == pytest.approx(1.0)


def test_embedding_is_stable_under_2x_upscaling():
    emb = ReferenceEmbedder()
    rng = np.random.default_rng(5)
    for _ in range(20):
        h, w = rng.integers(8, 30, 2)
        img = np.zeros((h, w))
        img[rng.random((h, w)) < 0.7] = rng.uniform(0.2, 1.0)
        img = np.clip(img + 0.1 * rng.random((h, w)) * (img > 0), 0, 1)
        big = np.kron(img, np.ones((2, 2)))
        assert cosine_similarity(emb(img), emb(big)) >= 0.95


def test_black_and_white_crops_are_dissimilar():
    emb = ReferenceEmbedder()
    assert cosine_similarity(emb(np.zeros((10, 10))), emb(np.ones((10, 10)))) < 0.5


def test_cosine_examples():
    assert cosine_similarity([2, 0], [5, 0]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 3]) == pytest.approx(0.0)
    assert cosine_similarity([1, 0], [1, 1]) == pytest.approx(0.70711, abs=1e-5)
    with pytest.raises(ValueError):
        cosine_similarity([0, 0], [1, 1])


def test_centroid_similarity_examples():
    assert centroid_similarity((3, 4), (3, 4), 10) == 1.0
    assert centroid_similarity((0, 0), (6, 8), 10) == 0.0
    assert centroid_similarity((0, 0), (3, 4), 10) == pytest.approx(0.5)
    assert centroid_similarity((0, 0), (30, 40), 10) == 0.0
    with pytest.raises(ValueError):
        centroid_similarity((0, 0), (1, 1), 0)


# --- cost matrix ---------------------------------------------------------------------------

def test_identical_frames_have_zero_diagonal():
    img, insts = scene([(15, 15), (40, 30), (65, 45)], [90, 160, 230])
    e = embed_instances(insts, img, ReidConfig(), ReferenceEmbedder())
    cost = build_cost_matrix(e, e)
    assert np.allclose(np.diag(cost), 0.0)
    assert cost.min() >= 0 and cost.max() <= 1


def test_cost_arithmetic_example():
    a = Instance(rect(10, 40, 0, 0, 6, 3), embedding=np.array([1.0, 0.0]))
    b = Instance(rect(10, 40, 2, 0, 6, 3), embedding=np.array([0.8, 0.6]))
    cfg = ReidConfig(0.5, 0.3, 0.2, d_max=20.0)
    assert build_cost_matrix([a], [b], cfg)[0, 0] == pytest.approx(0.27)


def test_cost_is_one_without_any_similarity():
    a = Instance(rect(10, 40, 0, 0, 2, 2), embedding=np.array([1.0, 0.0]))
    b = Instance(rect(10, 40, 30, 5, 2, 2), embedding=np.array([0.0, 1.0]))
    assert build_cost_matrix([a], [b], ReidConfig(d_max=5.0))[0, 0] == 1.0


def test_embed_instances_keeps_supplied_embeddings():
    inst = Instance(rect(10, 10, 1, 1, 3, 3), embedding=np.array([1.0, 2.0]))
    out = embed_instances([inst], None, ReidConfig(), ReferenceEmbedder())
    assert out[0] is inst


def test_embed_without_image_uses_mask_shape():
    m = rect(10, 10, 1, 1, 3, 3)
    out = embed_instances([Instance(m)], None, ReidConfig(), ReferenceEmbedder())
    img = m.to_array().astype(np.uint8) * 255
    ref = embed_instances([Instance(m)], img, ReidConfig(), ReferenceEmbedder())
    assert np.array_equal(out[0].embedding, ref[0].embedding)


def test_scaling_features_keeps_assignment():
    rng = np.random.default_rng(9)
    new = [Instance(rect(20, 20, k * 4, 0, 3, 3), embedding=rng.random(8)) for k in range(4)]
    old = [Instance(rect(20, 20, k * 4, 1, 3, 3), identity=k, embedding=rng.random(8)) for k in range(4)]
    c1 = build_cost_matrix(new, old)
    scaled = [Instance(i.mask, embedding=i.embedding * 7.5) for i in new]
    assert np.allclose(c1, build_cost_matrix(scaled, old))


# --- reidentify ----------------------------------------------------------------------------

def test_reidentify_identity_on_identical_frames():
    img, insts = scene([(15, 15), (40, 30), (65, 45)], [90, 160, 230])
    labelled, res = reidentify([Instance(i.mask) for i in insts], insts, (img, img))
    assert [i.identity for i in labelled] == [0, 1, 2]
    assert res.total_cost == pytest.approx(0.0, abs=1e-12)
    assert res.fresh == [] and res.missing == []


def test_reidentify_restores_swapped_list_order():
    img, insts = scene([(15, 15), (60, 40)], [90, 220])
    new = [Instance(insts[1].mask), Instance(insts[0].mask)]
    labelled, res = reidentify(new, insts, (img, img))
    assert res.mapping == {0: 1, 1: 0}
    assert [i.identity for i in labelled] == [1, 0]


def test_reidentify_uses_appearance_when_objects_trade_places():
    img_old, old = scene([(15, 15), (60, 40)], [90, 220])
    img_new, new = scene([(60, 40), (15, 15)], [90, 220])  # same animals, swapped positions
    cfg = ReidConfig(alpha=0.9, beta=0.05, gamma_w=0.05)
    labelled, _ = reidentify([Instance(n.mask) for n in new], old, (img_new, img_old), cfg)
    assert [i.identity for i in labelled] == [0, 1]


def test_reidentify_missing_and_fresh_identities():
    centres = [(8 + 7 * k, 10 + 4 * (k % 3)) for k in range(10)]
    grays = list(range(80, 250, 17))
    img, old = scene(centres, grays, r=3)
    # one animal hidden in the new frame
    new = [Instance(o.mask) for k, o in enumerate(old) if k != 4]
    labelled, res = reidentify(new, old, (img, img))
    assert res.missing == [4] and len(res.mapping) == 9 and res.fresh == []
    assert [i.identity for i in labelled] == [k for k in range(10) if k != 4]
    # more new than old: the extra one gets the next free identity
    labelled, res = reidentify([Instance(o.mask) for o in old], old[:9], (img, img), next_identity=42)
    assert res.fresh == [9] and labelled[9].identity == 42


def test_reidentify_is_permutation_equivariant():
    rng = np.random.default_rng(11)
    centres = [(10 + 15 * k, 10 + 8 * (k % 3)) for k in range(5)]
    img, old = scene(centres, [70, 110, 150, 190, 230])
    img2, cur = scene([(x + 2, y + 1) for x, y in centres], [70, 110, 150, 190, 230])
    new = [Instance(c.mask) for c in cur]
    _, base = reidentify(new, old, (img2, img))
    for _ in range(5):
        perm = rng.permutation(5)
        _, res = reidentify([new[p] for p in perm], old, (img2, img))
        assert {k: res.mapping[k] for k in range(5)} == {k: base.mapping[perm[k]] for k in range(5)}


def test_reidentify_requires_old_identities():
    img, insts = scene([(15, 15)], [90])
    with pytest.raises(ValueError):
        reidentify(insts, [Instance(insts[0].mask)], (img, img))


def test_crop_feeds_embedder_with_masked_pixels_only():
    img, insts = scene([(15, 15)], [200])
    c = crop(img, insts[0].mask, 4)
    assert set(np.unique(c)) <= {0, 200}
    assert BitMask.from_array(c > 0).area == insts[0].mask.area
