import numpy as np
import pytest

from vischunk.scene import dumps_scene, iou
from vischunk.synth import (SemanticChannel, SynthConfig, baseline_boxes, baseline_cc, baseline_intersection,
                            dumps_channel, generate_scene, loads_channel, read_manifest, rng_stream, touching,
                            voronoi_labels, write_dataset)

from conftest import grid_scene

SMALL = SynthConfig(width=64, height=48, n_superpixels=80)


def blocks(h, w, block=2):
    return (np.arange(h)[:, None] // block) * (w // block) + np.arange(w)[None, :] // block


def block_pixels(rows, cols, block=2):
    """Pixels of the blocks at block coordinates rows x cols."""
    return [(r, c) for br in rows for bc in cols for r in range(br * block, br * block + block)
            for c in range(bc * block, bc * block + block)]


def channel(scene, target_blocks, boxes=()):
    scores = np.tile([0.9, 0.1], (scene.n_superpixels, 1))
    scores[list(target_blocks)] = [0.2, 0.8]
    return SemanticChannel(scores, np.zeros((scene.height, scene.width, 3), dtype=np.uint8), list(boxes))


# an 8x12 pixel scene of 2x2 blocks (4 rows x 6 columns of superpixels)
LABELS = blocks(8, 12)


def sp(r, c):
    return r * 6 + c


def test_generation_deterministic():
    a = generate_scene(SMALL, 3)
    b = generate_scene(SMALL, 3)
    assert dumps_scene(a[0]) == dumps_scene(b[0])
    assert dumps_channel(a[1]) == dumps_channel(b[1])
    assert dumps_scene(generate_scene(SMALL, 4)[0]) != dumps_scene(a[0])


def test_seed_changes_scene():
    other = SynthConfig(**{**SMALL.to_dict(), "seed": 1, "n_instances": (2, 4)})
    assert dumps_scene(generate_scene(other, 3)[0]) != dumps_scene(generate_scene(SMALL, 3)[0])


@pytest.mark.parametrize("index", range(20))
def test_full_adjacency_instances_touch(index):
    cfg = SynthConfig(width=64, height=48, n_superpixels=80, n_instances=(2, 2), adjacency_pressure=1.0)
    scene, _ = generate_scene(cfg, index)
    a, b = (scene.instance_map == 0), (scene.instance_map == 1)
    assert touching(a, b)


@pytest.mark.parametrize("index", range(10))
def test_generated_scene_invariants(index):
    scene, ch = generate_scene(SMALL, index)
    assert scene.n_superpixels == SMALL.n_superpixels
    assert all(g.area >= 1 for g in scene.instances)
    assert np.allclose(ch.class_scores.sum(axis=1), 1)
    assert ch.colors.shape == (SMALL.height, SMALL.width, 3)


def test_semantic_argmax_mostly_majority_label():
    right = total = 0
    for i in range(30):
        scene, ch = generate_scene(SMALL, i)
        fg = scene.sp_inter.sum(axis=1)
        majority = (2 * fg > scene.sp_area).astype(int)
        tie = 2 * fg == scene.sp_area
        right += int(np.sum((ch.argmax_labels == majority) & ~tie))
        total += int(np.sum(~tie))
    assert right / total >= 0.9


def test_voronoi_partition():
    rng = np.random.default_rng(0)
    labels = voronoi_labels(30, 20, 25, rng)
    assert sorted(np.unique(labels).tolist()) == list(range(25))


def test_rng_streams_independent():
    a = rng_stream(0, 1, "color").random(3)
    assert np.array_equal(a, rng_stream(0, 1, "color").random(3))
    assert not np.array_equal(a, rng_stream(0, 1, "semantic").random(3))
    assert not np.array_equal(a, rng_stream(0, 2, "color").random(3))


@pytest.mark.parametrize("bad", [dict(n_superpixels=0), dict(adjacency_pressure=1.5), dict(n_instances=(3, 2)),
                                 dict(shape="hexagon"), dict(target_class=0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad)


def test_config_dict_roundtrip():
    cfg = SynthConfig(width=20, height=10, n_superpixels=30)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"colour": 1})


def test_cc_separated_instances():
    a = block_pixels([1, 2], [0, 1])
    b = block_pixels([1, 2], [4, 5])
    scene = grid_scene(LABELS, [a, b])
    chunks = baseline_cc(scene, channel(scene, [sp(1, 0), sp(1, 1), sp(2, 0), sp(2, 1),
                                                sp(1, 4), sp(1, 5), sp(2, 4), sp(2, 5)]))
    assert len(chunks) == 2
    assert sorted(max(iou(c, g) for c in chunks) for g in scene.instances) == [1, 1]


def test_cc_merges_touching_instances():
    a = block_pixels([1, 2], [1, 2])
    b = block_pixels([1, 2], [3, 4])
    scene = grid_scene(LABELS, [a, b])
    chunks = baseline_cc(scene, channel(scene, [sp(r, c) for r in (1, 2) for c in (1, 2, 3, 4)]))
    assert len(chunks) == 1
    assert all(iou(chunks[0], g) == 0.5 for g in scene.instances)


def test_cc_no_target():
    scene = grid_scene(LABELS, [block_pixels([0], [0])])
    assert baseline_cc(scene, channel(scene, [])) == []


def test_cc_ordered_by_area():
    scene = grid_scene(LABELS, [block_pixels([0], [0])])
    chunks = baseline_cc(scene, channel(scene, [sp(0, 0), sp(3, 3), sp(3, 4), sp(2, 4)]))
    assert [c.area for c in chunks] == [12, 4]


def test_boxes_exact_and_dropped():
    a = block_pixels([1, 2], [1, 2])
    b = block_pixels([1, 2], [3, 4])
    scene = grid_scene(LABELS, [a, b])
    ch = channel(scene, [], boxes=[scene.instance_bbox(0)])
    chunks = baseline_boxes(scene, ch)
    assert len(chunks) == 1
    assert iou(chunks[0], scene.instances[0]) == 1


def test_jittered_box_worse_than_support():
    scene = grid_scene(LABELS, [block_pixels([1, 2], [1, 2])])
    r0, c0, r1, c1 = scene.instance_bbox(0)
    ch = channel(scene, [], boxes=[(r0, c0, r1, c1 + 2)])
    assert iou(baseline_boxes(scene, ch)[0], scene.instances[0]) < 1


def test_intersection_splits_merged_component():
    a = block_pixels([1, 2], [1, 2])
    b = block_pixels([1, 2], [3, 4])
    scene = grid_scene(LABELS, [a, b])
    ch = channel(scene, [sp(r, c) for r in (1, 2) for c in (1, 2, 3, 4)],
                 boxes=[scene.instance_bbox(0), scene.instance_bbox(1)])
    assert len(baseline_cc(scene, ch)) == 1
    chunks = baseline_intersection(scene, ch)
    assert len(chunks) == 2
    assert all(max(iou(c, g) for c in chunks) == 1 for g in scene.instances)


def test_intersection_with_wrong_parse():
    scene = grid_scene(LABELS, [block_pixels([1, 2], [1, 2])])
    ch = channel(scene, [sp(1, 1), sp(2, 1)], boxes=[scene.instance_bbox(0)])
    c = baseline_intersection(scene, ch)[0]
    assert iou(c, scene.instances[0]) == 0.5


def test_channel_roundtrip():
    _, ch = generate_scene(SMALL, 1)
    back = loads_channel(dumps_channel(ch))
    assert np.array_equal(back.class_scores, ch.class_scores)
    assert np.array_equal(back.colors, ch.colors)
    assert back.boxes == ch.boxes


def test_dataset_manifest(tmp_path):
    path = write_dataset(SMALL, [0, 5], tmp_path)
    entries = read_manifest(path)
    assert [e.scene_index for e in entries] == [0, 5]
    scene, ch = entries[1].load()
    assert dumps_scene(scene) == dumps_scene(generate_scene(SMALL, 5)[0])
    other = tmp_path / "again"
    write_dataset(SMALL, [0, 5], other)
    assert (other / "manifest.txt").read_text() == path.read_text()


def test_manifest_detects_tampering(tmp_path):
    path = write_dataset(SMALL, [0], tmp_path)
    scene_file = tmp_path / "scene_00000.scene"
    scene_file.write_text(scene_file.read_text() + "\n")
    with pytest.raises(ValueError):
        read_manifest(path)[0].load()
