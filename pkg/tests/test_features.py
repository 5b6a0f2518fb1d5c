import numpy as np
import pytest

from vischunk.features import RELATIONS, SceneFeatures, phi, phi_columns, theta, theta_columns
from vischunk.scene import SceneError
from vischunk.synth import SemanticChannel, SynthConfig, generate_scene

from conftest import grid_scene

N_QUALITY = 2 + 5  # two classes plus moments, area fraction and scale
SIM = slice(N_QUALITY, N_QUALITY + 2)
REL = slice(N_QUALITY + 2, N_QUALITY + 2 + len(RELATIONS))


def blocks_scene(h=8, w=8, block=2):
    """Square superpixels of ``block`` x ``block`` pixels."""
    labels = (np.arange(h)[:, None] // block) * (w // block) + np.arange(w)[None, :] // block
    return grid_scene(labels, [[(0, 0), (0, 1)]])


def channel_for(scene, seed=0, colors=None):
    rng = np.random.default_rng(seed)
    scores = rng.dirichlet(np.ones(2), size=scene.n_superpixels)
    if colors is None:
        colors = rng.integers(0, 256, size=(scene.height, scene.width, 3), dtype=np.uint8)
    return SemanticChannel(scores, colors)


@pytest.fixture
def synthetic():
    return generate_scene(SynthConfig(width=64, height=48, n_superpixels=60), 0)


def test_dimensions(synthetic):
    scene, ch = synthetic
    c = scene.chunk([0, 1])
    assert phi(c, [], scene, ch).shape == (len(phi_columns(2)),)
    assert theta(5, c, scene, ch).shape == (len(theta_columns(2)),)


def test_empty_list_similarity_zero(synthetic):
    scene, ch = synthetic
    v = phi(scene.chunk([3, 4]), [], scene, ch)
    assert np.all(v[N_QUALITY:] == 0)


def test_self_overlap(synthetic):
    scene, ch = synthetic
    c = scene.chunk([3, 4])
    v = phi(c, [c], scene, ch)
    assert v[SIM.start] == 1
    assert v[REL][RELATIONS.index("overlapping")] == 1
    assert v[-1] == 1


def test_class_histogram_sums_to_one(synthetic):
    scene, ch = synthetic
    v = phi(scene.chunk([0, 7, 9]), [], scene, ch)
    assert v[:2].sum() == pytest.approx(1)


@pytest.mark.parametrize("n_prior", [1, 2, 5])
def test_relation_histogram_sums_to_one(synthetic, n_prior):
    scene, ch = synthetic
    L = [scene.chunk([i]) for i in range(10, 10 + n_prior)]
    v = phi(scene.chunk([0, 1]), L, scene, ch)
    assert v[REL].sum() == pytest.approx(1)
    assert v[-1] == n_prior


def test_relation_directions():
    scene = blocks_scene(8, 8)
    ch = channel_for(scene)
    top_left, below = scene.chunk([0]), scene.chunk([12])
    rel = dict(zip(RELATIONS, phi(top_left, [below], scene, ch)[REL]))
    # the candidate sits above the prior chunk and far from it
    assert rel["above"] == 0.5 and rel["far"] == 0.5
    rel = dict(zip(RELATIONS, phi(below, [top_left], scene, ch)[REL]))
    assert rel["below"] == 0.5
    rel = dict(zip(RELATIONS, phi(scene.chunk([0]), [scene.chunk([1])], scene, ch)[REL]))
    assert rel["left"] == 0.5 and rel["near"] == 0.5


def test_square_moments_symmetric():
    scene = blocks_scene()
    ch = channel_for(scene)
    v = phi(scene.chunk([0, 1, 4, 5]), [], scene, ch)
    eta20, eta02, eta11 = v[2:5]
    assert eta11 == pytest.approx(0, abs=1e-15)
    assert eta20 == pytest.approx(eta02)


def test_moments_translation_invariant():
    scene = blocks_scene(12, 12)
    ch = channel_for(scene)
    # an L-shape of blocks and the same shape shifted by two blocks each way
    a = phi(scene.chunk([0, 6, 7]), [], scene, ch)[2:5]
    b = phi(scene.chunk([14, 20, 21]), [], scene, ch)[2:5]
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_theta_empty_chunk_conventions():
    scene = blocks_scene()
    ch = channel_for(scene)
    v = theta(3, scene.empty_chunk(), scene, ch)
    cols = theta_columns(2)
    assert v[cols.index("color_sim")] == 1
    assert v[cols.index("region_fill")] == 1  # a square superpixel fills its box


def test_theta_identical_colors():
    scene = blocks_scene()
    ch = channel_for(scene, colors=np.full((8, 8, 3), 77, dtype=np.uint8))
    v = theta(1, scene.chunk([0]), scene, ch)
    assert v[theta_columns(2).index("color_sim")] == 1


def test_theta_far_superpixel_lowers_fill():
    scene = blocks_scene()
    ch = channel_for(scene)
    cols = theta_columns(2)
    fill_c = theta(1, scene.empty_chunk(), scene, ch)[cols.index("region_fill")]
    assert theta(15, scene.chunk([0, 1]), scene, ch)[cols.index("region_fill")] < fill_c


def test_theta_rejects_member(synthetic):
    scene, ch = synthetic
    with pytest.raises(SceneError):
        theta(2, scene.chunk([2]), scene, ch)


def test_batch_matches_single(synthetic):
    scene, ch = synthetic
    ctx = SceneFeatures(scene, ch)
    c = scene.chunk([1, 2, 3])
    member = ctx.membership([c])[0]
    cand = np.array([0, 4, 10, 30])
    batch = ctx.theta_batch(member, cand)
    for row, s in zip(batch, cand):
        assert np.array_equal(row, theta(int(s), c, scene, ch))


def test_deterministic(synthetic):
    scene, ch = synthetic
    L = [scene.chunk([5, 6]), scene.chunk([20])]
    a = phi(scene.chunk([1, 2]), L, scene, ch)
    b = phi(scene.chunk([1, 2]), L, scene, ch)
    assert a.tobytes() == b.tobytes()


def test_features_bounded(synthetic):
    scene, ch = synthetic
    ctx = SceneFeatures(scene, ch)
    member = ctx.membership([scene.chunk([0, 1, 2])])[0]
    v = ctx.theta_batch(member, np.arange(3, scene.n_superpixels))
    cols = theta_columns(2)
    sim = v[:, cols.index("color_sim")]
    fill = v[:, cols.index("region_fill")]
    assert np.all((0 <= sim) & (sim <= 1 + 1e-12))
    assert np.all((0 < fill) & (fill <= 1))
