import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from teachnet.geometry import (
    HAND_CENTER,
    Camera,
    Capsule,
    DepthImage,
    ImageFormatError,
    camera_from_angles,
    capsule_distance,
    closest_points_segments,
    crop_resize_normalize,
    default_cameras,
    look_at,
    ray_capsule_intersect,
    read_depth,
    read_image_blob,
    render_capsules,
    render_depth,
    resize_nearest,
    segment_segment_distance,
    write_depth,
    write_image_blob,
)

coords = st.floats(-0.1, 0.1, allow_nan=False)
point = st.tuples(coords, coords, coords).map(np.array)


def test_segment_distance_matches_dense_sampling(rng):
    for _ in range(20):
        a0, a1, b0, b1 = rng.uniform(-0.05, 0.05, size=(4, 3))
        ref = oracles.sampled_segment_distance(a0, a1, b0, b1, n=1000)
        d = segment_segment_distance(a0, a1, b0, b1)
        # sampling can only overestimate
        assert d <= ref + 1e-12
        assert ref - d < 1e-4


@pytest.mark.parametrize("b0, b1, expected", [
    ([0, 1, 0], [1, 1, 0], 1.0),          # parallel, overlapping
    ([2, 1, 0], [3, 1, 0], np.sqrt(2)),   # parallel, disjoint
    ([0.5, -1, 1], [0.5, 1, 1], 1.0),     # skew, crossing above
    ([0.5, 0, 0], [0.5, 0, 0], 0.0),      # degenerate point on the segment
    ([2, 0, 0], [3, 0, 0], 1.0),          # collinear gap
])
def test_segment_distance_cases(b0, b1, expected):
    assert segment_segment_distance([0, 0, 0], [1, 0, 0], b0, b1) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(point, point, point, point)
def test_segment_distance_symmetric_and_nonnegative(a0, a1, b0, b1):
    d = segment_segment_distance(a0, a1, b0, b1)
    assert d >= 0
    assert d == segment_segment_distance(b0, b1, a0, a1)
    assert d == segment_segment_distance(a1, a0, b1, b0) or abs(d - segment_segment_distance(a1, a0, b1, b0)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(point, point, point, point)
def test_closest_points_realize_distance(a0, a1, b0, b1):
    pa, pb, dist = closest_points_segments(a0[None], a1[None], b0[None], b1[None])
    assert abs(np.linalg.norm(pa[0] - pb[0]) - dist[0]) < 1e-12
    assert oracles.point_segment_distance(pa[0], a0, a1) < 1e-9
    assert oracles.point_segment_distance(pb[0], b0, b1) < 1e-9


def test_capsule_distance_subtracts_radii():
    c1 = Capsule([0, 0, 0], [1, 0, 0], 0.1)
    c2 = Capsule([0, 1, 0], [1, 1, 0], 0.2)
    assert capsule_distance(c1, c2) == pytest.approx(0.7)
    assert capsule_distance(c1, c2) == capsule_distance(c2, c1)
    with pytest.raises(ValueError):
        Capsule([0, 0, 0], [1, 0, 0], 0.0)


def test_ray_hits_lie_on_surface(rng):
    p0, p1, r = np.array([0.0, 0, 0.5]), np.array([0.05, 0.02, 0.55]), 0.02
    dirs = (np.array([0.05, 0.02, 0.55]) * rng.uniform(0, 1, (500, 1)) + np.array([0, 0, 0.5])
            + rng.normal(0, 0.02, (500, 3)))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    t = ray_capsule_intersect(np.zeros((500, 3)), dirs, p0, p1, r)
    hit = np.isfinite(t)
    assert hit.sum() > 100 and (~hit).sum() > 10
    for ti, d in zip(t[hit], dirs[hit]):
        assert abs(oracles.point_segment_distance(ti * d, p0, p1) - r) < 1e-6
    # a miss must really miss: the ray's closest approach stays outside
    for d in dirs[~hit][:20]:
        ts = np.linspace(0, 1.0, 20001)[:, None]
        pts = ts * d
        assert min(oracles.point_segment_distance(p, p0, p1) for p in pts[::50]) > r - 1e-4


def test_ray_misses():
    o = np.zeros((1, 3))
    assert np.isinf(ray_capsule_intersect(o, [[0, 0, -1.0]], [0, 0, 1], [0, 0, 2], 0.1))[0]
    # origin inside the capsule
    assert np.isinf(ray_capsule_intersect(o, [[0, 0, 1.0]], [0, 0, -1], [0, 0, 1], 0.5))[0]
    # head-on hit of the near cap
    assert ray_capsule_intersect(o, [[0, 0, 1.0]], [0, 0, 1], [0, 0, 2], 0.1)[0] == pytest.approx(0.9)


def _small_camera(**kw):
    return Camera(look_at([0, -0.3, 0.07], [0, 0, 0.07]), fx=60, fy=60, cx=20, cy=20, width=40, height=40,
                  **kw)


def test_culled_render_equals_full_cast(model):
    from teachnet.kinematics import posed_capsules

    cam = _small_camera()
    P0, P1, radii = posed_capsules(model, model.mid_range)
    img = render_capsules(P0, P1, radii, cam)
    dirs = cam.ray_directions()
    full = np.full(len(dirs), cam.z_far)
    for q0, q1, r in zip(cam.to_camera(P0), cam.to_camera(P1), radii):
        t = ray_capsule_intersect(np.zeros_like(dirs), dirs, q0, q1, r)
        z = t * dirs[:, 2]
        ok = np.isfinite(z) & (z >= cam.z_near) & (z < cam.z_far)
        full[ok] = np.minimum(full[ok], z[ok])
    np.testing.assert_array_equal(img.data, full.reshape(40, 40).astype(np.float32))


def test_depth_monotone_in_distance():
    cam = _small_camera()
    near = render_capsules([[0, 0, 0.05]], [[0, 0, 0.09]], [0.02], cam)
    far = render_capsules([[0, 0.1, 0.05]], [[0, 0.1, 0.09]], [0.02], cam)
    fg = (near.data < cam.z_far) & (far.data < cam.z_far)
    assert fg.sum() > 0
    assert np.all(far.data[fg] > near.data[fg])


def test_render_values_valid(model):
    for cam in default_cameras(width=64, height=64, cx=32, cy=32, fx=70, fy=70):
        img = render_depth(model, model.mid_range, cam).check()
        fg = img.data < cam.z_far
        assert 20 < fg.sum() < img.data.size
        assert img.data[fg].min() >= cam.z_near


def test_default_cameras_look_at_hand():
    cams = default_cameras()
    assert len(cams) == 9 and [c.camera_id for c in cams] == list(range(9))
    pos = np.array([c.position for c in cams])
    assert len({tuple(np.round(p, 9)) for p in pos}) == 9
    for c in cams:
        to_center = np.asarray(HAND_CENTER) - c.position
        assert np.linalg.norm(to_center) == pytest.approx(0.35)
        np.testing.assert_allclose(c.optical_axis, to_center / np.linalg.norm(to_center), atol=1e-12)
        np.testing.assert_allclose(c.to_camera(HAND_CENTER)[:2], 0, atol=1e-12)


def test_camera_image_up_is_world_up():
    cam = camera_from_angles(0.0, 0.0)
    above = cam.to_camera(np.asarray(HAND_CENTER) + [0, 0, 0.05])
    assert above[1] < 0  # image y points down


def test_crop_normalize_ranges():
    cam = _small_camera()
    img = render_capsules([[0, 0, 0.05]], [[0, 0, 0.09]], [0.02], cam)
    center = cam.to_camera([0, 0, 0.07])
    out = crop_resize_normalize(img, center, 0.26, 24)
    assert out.shape == (24, 24) and out.dtype == np.float32
    assert out.min() >= -1 and out.max() <= 1
    assert np.any(out == 1.0) and np.any(out < 0)
    # the capsule surface facing the camera is 2 cm in front of the centre
    assert out.min() == pytest.approx(-0.02 / 0.13, abs=0.01)


def test_crop_all_background():
    img = DepthImage(np.full((10, 10), 1.0, np.float32), 0.1, 1.0, 10, 10, 5, 5)
    assert np.all(crop_resize_normalize(img, [0, 0, 0.5], 0.2, 8) == 1.0)


def test_resize_nearest_identity_and_shape(rng):
    a = rng.normal(size=(3, 9, 9))
    assert np.array_equal(resize_nearest(a, 9), a)
    assert resize_nearest(a, 4).shape == (3, 4, 4)


def test_blob_roundtrip(tmp_path, rng):
    data = rng.normal(size=(7, 5)).astype(np.float32)
    write_image_blob(tmp_path / "x.f32", data, {"camera_id": 3})
    back, meta = read_image_blob(tmp_path / "x.f32")
    assert np.array_equal(back, data) and meta["camera_id"] == 3 and meta["width"] == 5
    assert (tmp_path / "x.f32").stat().st_size == 7 * 5 * 4


def test_blob_wrong_length(tmp_path):
    write_image_blob(tmp_path / "x.f32", np.zeros((4, 4), np.float32), {})
    (tmp_path / "x.f32").write_bytes(b"\0" * 60)
    with pytest.raises(ImageFormatError):
        read_image_blob(tmp_path / "x.f32")


def test_bad_sidecar(tmp_path):
    write_image_blob(tmp_path / "x.f32", np.zeros((4, 4), np.float32), {})
    (tmp_path / "x.json").write_text(json.dumps({"width": 4}))
    with pytest.raises(ImageFormatError):
        read_image_blob(tmp_path / "x.f32")


def test_depth_roundtrip(tmp_path, model):
    cam = _small_camera()
    img = render_depth(model, model.mid_range, cam)
    write_depth(tmp_path / "d.f32", img)
    back = read_depth(tmp_path / "d.f32")
    assert np.array_equal(back.data, img.data) and back.fx == cam.fx


def test_camera_rejects_bad_clip():
    with pytest.raises(ValueError):
        _small_camera(z_near=1.0, z_far=0.5)
