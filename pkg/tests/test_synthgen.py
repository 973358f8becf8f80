import filecmp
import functools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage
from scipy.spatial import cKDTree

from trace_forge.errors import GenerationFailed, IoError, OutOfFrustum, OverlapError, ParseError, ShapeMismatch
from trace_forge.geometry import default_rig, mask_edges, project
from trace_forge.synthgen import (
    FAMILIES,
    AugmentationConfig,
    ContourConfig,
    Dataset,
    FrameContour,
    RenderConfig,
    apply_geometric,
    augment,
    build_dataset,
    export_masks,
    generate_scene_samples,
    make_scene,
    read_masks,
    read_sample,
    render_views,
    sample_contour,
    split_eyes,
    transform_trace,
    truth_trace,
    validate_dataset,
    write_sample,
)
from trace_forge.synthgen.dataset import format_manifest, parse_manifest, scene_splits
from trace_forge.synthgen.sample import decode_sample, encode_sample
from trace_forge.synthgen.scene import eye_crop_origins
from trace_forge.trace import RadialTrace

MIRROR = [1, 0, 3, 2]


@pytest.fixture(scope="module")
def scene():
    return make_scene(FrameContour.superellipse(25.0, 18.0, 3.5, rotation_rad=0.05), 18.0, 4.0, wrap_deg=4.0, pitch_deg=-2.0)


# ---------------------------------------------------------------------------
# Contours
# ---------------------------------------------------------------------------


def test_contour_validation():
    with pytest.raises(ValueError):
        FrameContour("blob", {"a": 20.0, "b": 20.0})
    with pytest.raises(ValueError):
        FrameContour.ellipse(40.0, 20.0)
    with pytest.raises(ValueError):
        FrameContour("fourier", {"a": 20.0, "b": 18.0, "cos": [0.2]})
    with pytest.raises(ValueError):
        FrameContour("fourier", {"a": 20.0, "b": 18.0, "cos": np.zeros(9)})


@given(st.integers(0, 2**32 - 1), st.sampled_from(FAMILIES))
def test_sampled_contours_are_valid(seed, family):
    c = sample_contour(seed, family=family)
    assert c.family == family
    # boxing-centered about the plane origin
    assert np.max(np.abs(c.center_2d)) < 1e-6
    c.check_star_shaped()


def test_sample_contour_deterministic():
    a = sample_contour(5)
    b = sample_contour(5)
    th = np.linspace(0, 6, 50)
    assert a.family == b.family and np.array_equal(a.polar_radius(th), b.polar_radius(th))


def test_sample_contour_gives_up():
    impossible = ContourConfig(family_weights=(1.0, 0, 0, 0), circle_radius_mm=(40.0, 45.0))
    with pytest.raises(GenerationFailed):
        sample_contour(0, impossible)


def test_truth_trace_of_circle():
    tr = truth_trace(FrameContour.circle(20.0), "right")
    assert np.max(np.abs(tr.radii_mm - 20.0)) < 1e-9


def test_mirrored_contour_reflects_angles():
    c = FrameContour.superellipse(25.0, 18.0, 3.5, rotation_rad=0.05)
    m = FrameContour(c.family, c.params, rotation_rad=c.rotation_rad, mirrored=True)
    th = np.linspace(0, 2 * np.pi, 37)
    assert np.allclose(m.polar_radius(th), c.polar_radius(np.pi - th), rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# Rendering and eye splitting
# ---------------------------------------------------------------------------


def test_render_conventions(rig, eye_pair):
    for s in eye_pair:
        assert s.shape == (256, 256)
        assert s.channels == 3
        for v in s.views:
            assert v.mask.any() and not v.mask.all()
            assert v.depth[v.mask].min() >= 180 and v.depth[v.mask].max() <= 255
            assert v.depth[~v.mask].max() <= 120
            assert ndimage.label(v.mask)[1] == 1
            assert 0.0 <= v.image.min() and v.image.max() <= 1.0
            assert np.array_equal(np.rint(v.image * 255) / 255, v.image)


def test_mask_inner_edge_reprojects(rig, scene):
    left, right = split_eyes(scene, rig)
    for smp, c in ((left, scene.left), (right, scene.right)):
        dense = c.plane.to_world(c.dense_points(20000))
        for cam, v, off in zip(rig, smp.views, smp.offsets):
            inner, _ = mask_edges(v.mask)
            d, _ = cKDTree(project(cam, dense) - off).query(inner)
            assert np.sqrt(np.mean(d**2)) < 0.3
            assert d.max() <= 0.5 + 1e-9


def test_split_eyes_is_mirror_symmetric(rig, scene):
    ol, _ = eye_crop_origins(scene, rig)
    w = rig[0].image_size[0]
    orr = np.array([[w - 255 - ol[MIRROR[i], 0], ol[MIRROR[i], 1]] for i in range(4)])
    left, right = split_eyes(scene, rig, crop_origins=(ol, orr))
    assert left.sample_id.endswith("_L") and right.sample_id.endswith("_R")
    for a in range(4):
        lv, rv = left.views[a], right.views[MIRROR[a]]
        assert np.array_equal(lv.mask, rv.mask[:, ::-1])
        assert np.array_equal(lv.depth[lv.mask], rv.depth[:, ::-1][lv.mask])
    # r_L(theta) = r_R(pi - theta)
    idx = (300 - np.arange(600)) % 600
    assert np.max(np.abs(left.truth.radii_mm - right.truth.radii_mm[idx])) < 1e-9


def test_crops_contain_the_rim_with_margin(eye_pair):
    for s in eye_pair:
        for v in s.views:
            ys, xs = np.nonzero(v.mask)
            assert xs.min() >= 8 and ys.min() >= 8 and xs.max() < 248 and ys.max() < 248


def test_eye_crops_do_not_intersect(eye_pair):
    left, right = eye_pair
    for ol, orr in zip(left.offsets, right.offsets):
        assert ol[0] + 256 <= orr[0]


def test_split_eyes_errors(rig, scene):
    ol, orr = eye_crop_origins(scene, rig)
    with pytest.raises(OverlapError):
        split_eyes(scene, rig, crop_origins=(ol, ol))
    with pytest.raises(OutOfFrustum):
        split_eyes(scene, rig, crop_origins=(ol - [0, 120], orr))
    touching = make_scene(FrameContour.circle(24.0), bridge_mm=-30.0)
    with pytest.raises(OverlapError):
        split_eyes(touching, rig)


def test_render_out_of_frustum():
    rig = default_rig(focal_length_px=4000.0)
    with pytest.raises(OutOfFrustum):
        render_views(FrameContour.circle(30.0), rig)


def test_generation_is_a_pure_function(rig, eye_pair):
    again = generate_scene_samples(42, 0, rig)
    for a, b in zip(eye_pair, again):
        assert encode_sample(a) == encode_sample(b)
        assert a.truth == b.truth
    other = generate_scene_samples(42, 1, rig)
    assert encode_sample(other[0]) != encode_sample(eye_pair[0])


def test_gray_rendering(rig, scene):
    left, _ = split_eyes(scene, rig, RenderConfig(color="gray"))
    assert left.channels == 1


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def test_disabled_augmentation_is_identity(eye_pair):
    s = eye_pair[1]
    out = augment(s, AugmentationConfig.disabled(), 3)
    assert encode_sample(out) == encode_sample(s)
    assert out.truth == s.truth
    assert out is not s


def test_transform_trace_exact_roll():
    r = np.linspace(15, 25, 600)
    tr = RadialTrace(r)
    k = 7
    out = transform_trace(tr, k * 2 * np.pi / 600)
    assert np.array_equal(out.radii_mm, np.roll(r, k))
    # the inverse rotation restores the trace
    assert np.array_equal(transform_trace(out, -k * 2 * np.pi / 600).radii_mm, r)


@given(st.floats(-0.2, 0.2), st.floats(0.9, 1.1))
def test_transform_trace_matches_contour(rot, scale):
    c = FrameContour.ellipse(24.0, 17.0)
    tr = truth_trace(c, "right")
    out = transform_trace(tr, rot, scale)
    want = scale * c.polar_radius(tr.angles - rot)
    assert np.max(np.abs(out.radii_mm - want)) < 2e-4


def test_geometric_augmentation_moves_mask_with_trace(eye_pair):
    s = eye_pair[1]
    out = apply_geometric(s, np.radians(6.0), 1.0, (0.0, 0.0))
    for v0, v1 in zip(s.views, out.views):
        assert abs(int(v1.mask.sum()) - int(v0.mask.sum())) < 0.05 * v0.mask.sum()
        assert v1.depth[v1.mask].min() > v1.depth[~v1.mask].max()
    assert out.truth.meta.get("augmented")
    shifted = apply_geometric(s, 0.0, 1.0, (3.0, 0.0))
    assert np.array_equal(shifted.views[0].mask[:, 3:], s.views[0].mask[:, :-3])
    assert shifted.truth == s.truth


def test_scaled_augmentation_scales_area(eye_pair):
    s = eye_pair[1]
    out = apply_geometric(s, 0.0, 1.1, (0.0, 0.0))
    ratio = out.views[0].mask.sum() / s.views[0].mask.sum()
    assert abs(ratio - 1.21) < 0.05
    assert np.allclose(out.truth.radii_mm, 1.1 * s.truth.radii_mm)


@functools.lru_cache(maxsize=1)
def _small_left():
    sc = make_scene(FrameContour.circle(16.0), 16.0, 3.0)
    return split_eyes(sc, default_rig(), RenderConfig(crop_size=160))[0]


@given(st.integers(0, 2**16))
def test_augmentation_keeps_views_consistent(seed):
    left = _small_left()
    out = augment(left, AugmentationConfig(), seed)
    assert out.shape == left.shape
    decisions = out.meta.get("augmentation", {})
    if "geometric" not in decisions:
        assert out.truth == left.truth
        for a, b in zip(out.views, left.views):
            assert np.array_equal(a.mask, b.mask) and np.array_equal(a.depth, b.depth)
    for v in out.views:
        assert 0.0 <= v.image.min() and v.image.max() <= 1.0


def test_augmentation_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(p_blur=1.5)


# ---------------------------------------------------------------------------
# Containers and datasets
# ---------------------------------------------------------------------------


def test_sample_container_round_trip(eye_pair, tmp_path):
    s = eye_pair[0]
    write_sample(s, tmp_path / "a.bin")
    back = read_sample(tmp_path / "a.bin", s.truth)
    assert back.sample_id == s.sample_id and back.eye == s.eye and back.rng_seed == s.rng_seed
    assert np.array_equal(back.offsets, s.offsets) and back.mm_per_px == s.mm_per_px
    for a, b in zip(back.views, s.views):
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.mask, b.mask)
    assert encode_sample(back) == encode_sample(s)


def test_sample_container_rejects_corruption(eye_pair):
    data = encode_sample(eye_pair[0])
    with pytest.raises(ParseError):
        decode_sample(data[:-1], eye_pair[0].truth)
    with pytest.raises(ParseError):
        decode_sample(b"XXXXXXXX" + data[8:], eye_pair[0].truth)
    with pytest.raises(ParseError):
        decode_sample(data + b"\0", eye_pair[0].truth)


def test_read_sample_missing(tmp_path, eye_pair):
    with pytest.raises(IoError):
        read_sample(tmp_path / "none.bin", eye_pair[0].truth)


def test_sample_shape_checks(eye_pair):
    from trace_forge.synthgen import MultiViewSample

    s = eye_pair[0]
    with pytest.raises(ShapeMismatch):
        MultiViewSample(s.views[:3], s.truth, s.eye, "x", 0)


def test_scene_split_counts():
    labels = scene_splits(500, 42)
    assert [labels.count(k) for k in ("train", "val", "test")] == [400, 50, 50]
    assert scene_splits(500, 42) == labels
    assert scene_splits(500, 43) != labels
    labels = scene_splits(100, 42)
    assert [labels.count(k) for k in ("train", "val", "test")] == [80, 10, 10]


def test_dataset_layout_and_validation(small_dataset):
    ds = Dataset(small_dataset)
    assert len(ds) == 20
    assert validate_dataset(small_dataset) == []
    h = ds.manifest.header
    assert h["seed"] == "7" and h["n_scenes"] == "10" and h["split_hash"] == ds.manifest.split_hash
    assert ds.rig == default_rig()
    for e in ds.manifest.entries:
        other = [x for x in ds.manifest.entries if x.scene == e.scene and x is not e]
        assert len(other) == 1 and other[0].split == e.split and other[0].eye != e.eye
    s = ds.load(ds.ids("train")[0])
    assert s.truth.eye == s.eye
    assert parse_manifest(format_manifest(ds.manifest)) == ds.manifest


def test_dataset_generation_is_byte_identical(small_dataset, tmp_path):
    other = tmp_path / "again"
    build_dataset(other, 10, 7)
    cmp = filecmp.dircmp(small_dataset, other)
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("samples", "traces"):
        c = filecmp.dircmp(small_dataset / sub, other / sub)
        names = sorted((small_dataset / sub).iterdir())
        match, mismatch, errors = filecmp.cmpfiles(small_dataset / sub, other / sub, [p.name for p in names], shallow=False)
        assert not mismatch and not errors and len(match) == 20
        assert not c.left_only and not c.right_only
    assert (small_dataset / "manifest.txt").read_bytes() == (other / "manifest.txt").read_bytes()


def test_validate_catches_damage(small_dataset, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(small_dataset, bad)
    text = (bad / "manifest.txt").read_text()
    first = next(line for line in text.splitlines() if "\ttrain\t" in line)
    (bad / "manifest.txt").write_text(text.replace(first, first.replace("\ttrain\t", "\ttest\t")))
    problems = validate_dataset(bad)
    assert any("split hash" in p for p in problems)
    assert any("different splits" in p for p in problems)
    assert validate_dataset(tmp_path / "missing") != []


def test_manifest_parse_errors():
    with pytest.raises(ParseError):
        parse_manifest("format = something else\n")
    with pytest.raises(ParseError) as info:
        parse_manifest("format = trace-forge-dataset 1\nid\tsplit\teye\tscene\tsample\ttrace\tfamily\na\tb\n")
    assert info.value.line == 3


def test_build_dataset_rejects_tiny(tmp_path):
    with pytest.raises(ValueError):
        build_dataset(tmp_path / "x", 3, 1)


def test_mask_png_round_trip(eye_pair, tmp_path):
    s = eye_pair[1]
    export_masks(s, tmp_path / "m")
    masks, offsets = read_masks(tmp_path / "m")
    assert all(np.array_equal(a, b) for a, b in zip(masks, s.masks))
    assert np.array_equal(offsets, s.offsets)
    with pytest.raises(IoError):
        read_masks(tmp_path / "nothing")
