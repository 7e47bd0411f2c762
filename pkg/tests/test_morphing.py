import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demorphlab.errors import DegenerateGeometryError, StructuralError
from demorphlab.morphing import (
    LandmarkSet,
    MorphParams,
    TriangleMesh,
    average_landmarks,
    blend,
    create_morph,
    read_landmarks,
    sample_bilinear,
    triangle_areas,
    triangulate,
    warp_to_landmarks,
    write_landmarks,
)

QUANT = 1.0 / 255.0


def random_landmarks(rng, n, size=(64, 64)):
    h, w = size
    pts = np.column_stack(
        [rng.uniform(2, w - 3, size=n), rng.uniform(2, h - 3, size=n)]
    )
    return LandmarkSet(points=pts, image_size=size)


# ---------------------------------------------------------------------------
# average_landmarks


def test_average_identity_at_zero(rng):
    l1 = random_landmarks(rng, 10)
    l2 = random_landmarks(rng, 10)
    out = average_landmarks(l1, l2, 0.0)
    np.testing.assert_array_equal(out.points, l1.points)


def test_average_midpoint():
    l1 = LandmarkSet(points=np.array([[0.0, 0.0]]), image_size=(32, 32))
    l2 = LandmarkSet(points=np.array([[10.0, 20.0]]), image_size=(32, 32))
    out = average_landmarks(l1, l2, 0.5)
    np.testing.assert_allclose(out.points, [[5.0, 10.0]])


def test_average_quarter_68_points_elementwise(rng):
    # oracle: scalar recomputation per coordinate
    l1 = random_landmarks(rng, 68)
    l2 = random_landmarks(rng, 68)
    out = average_landmarks(l1, l2, 0.25)
    for i in range(68):
        for j in range(2):
            expected = 0.75 * l1.points[i, j] + 0.25 * l2.points[i, j]
            assert out.points[i, j] == pytest.approx(expected, abs=1e-12)
    np.testing.assert_array_equal(out.frame_anchors, l1.frame_anchors)


def test_average_count_mismatch(rng):
    with pytest.raises(StructuralError):
        average_landmarks(random_landmarks(rng, 5), random_landmarks(rng, 6), 0.5)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_average_swap_symmetry(t, seed):
    r = np.random.default_rng(seed)
    l1 = random_landmarks(r, 7)
    l2 = random_landmarks(r, 7)
    a = average_landmarks(l1, l2, t)
    b = average_landmarks(l2, l1, 1.0 - t)
    np.testing.assert_allclose(a.points, b.points, atol=1e-12)


def test_landmarks_out_of_bounds_rejected():
    with pytest.raises(StructuralError):
        LandmarkSet(points=np.array([[5.0, 64.0]]), image_size=(64, 64))


# ---------------------------------------------------------------------------
# triangulate


def test_triangulate_four_corners_two_triangles():
    corners = np.array([[0.0, 0.0], [9.0, 0.0], [0.0, 7.0], [9.0, 7.0]])
    mesh = triangulate(corners)
    assert len(mesh.simplices) == 2
    assert triangle_areas(corners, mesh).sum() == pytest.approx(9 * 7)


def test_triangulate_area_sum_random_20(rng):
    size = (48, 40)
    lms = random_landmarks(rng, 20, size)
    mesh = triangulate(lms, size)
    total = triangle_areas(lms.all_points, mesh).sum()
    expected = (size[1] - 1) * (size[0] - 1)  # anchors span the pixel-center rectangle
    assert total == pytest.approx(expected, rel=1e-6)


def test_triangulate_duplicate_point_still_covers(rng):
    size = (32, 32)
    pts = random_landmarks(rng, 8, size).points
    pts = np.vstack([pts, pts[3]])  # exact duplicate
    lms = LandmarkSet(points=pts, image_size=size)
    mesh = triangulate(lms, size)
    total = triangle_areas(lms.all_points, mesh).sum()
    assert total == pytest.approx(31 * 31, rel=1e-6)


def test_triangulate_collinear_degenerate():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    with pytest.raises(DegenerateGeometryError):
        triangulate(pts)


def test_triangulate_too_few_points():
    with pytest.raises(DegenerateGeometryError):
        triangulate(np.array([[0.0, 0.0], [1.0, 1.0]]))


# ---------------------------------------------------------------------------
# warp_to_landmarks


def test_warp_identity(face_pair):
    img, lms, _, _ = face_pair
    mesh = triangulate(lms, lms.image_size)
    out = warp_to_landmarks(img, lms, lms, mesh)
    assert np.abs(out - img).max() <= QUANT


def test_warp_uniform_color(rng):
    img = np.full((32, 32, 3), 0.37)
    l1 = random_landmarks(rng, 6, (32, 32))
    l2 = random_landmarks(rng, 6, (32, 32))
    mesh = triangulate(l1, (32, 32))
    out = warp_to_landmarks(img, l1, l2, mesh)
    np.testing.assert_allclose(out, 0.37, atol=1e-12)


def test_warp_single_triangle_translation_oracle():
    # 16x16 gradient image, one triangle translated by (+2, 0); interior
    # pixels must match a direct shifted bilinear sample of the source.
    h = w = 16
    img = np.zeros((h, w, 3))
    img[..., 0] = np.linspace(0, 1, w)[None, :].repeat(h, axis=0)
    img[..., 1] = np.linspace(0, 1, h)[:, None].repeat(w, axis=1)
    src = np.array([[1.0, 1.0], [13.0, 2.0], [6.0, 13.0]])
    dst = src + np.array([2.0, 0.0])
    mesh = TriangleMesh(simplices=np.array([[0, 1, 2]]), num_points=3)
    out = warp_to_landmarks(img, src, dst, mesh)

    d0, d1, d2 = dst
    for y in range(h):
        for x in range(w):
            det = (d1 - d0)[0] * (d2 - d0)[1] - (d2 - d0)[0] * (d1 - d0)[1]
            w1 = ((x - d0[0]) * (d2 - d0)[1] - (y - d0[1]) * (d2 - d0)[0]) / det
            w2 = ((y - d0[1]) * (d1 - d0)[0] - (x - d0[0]) * (d1 - d0)[1]) / det
            if w1 > 1e-6 and w2 > 1e-6 and w1 + w2 < 1 - 1e-6:  # strict interior
                expected = sample_bilinear(img, np.array([x - 2.0]), np.array([float(y)]))[0]
                np.testing.assert_allclose(out[y, x], expected, atol=1e-6)


def test_warp_degenerate_triangle_skipped(caplog):
    img = np.random.default_rng(0).random((8, 8, 3))
    pts = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 3.0]])
    collapsed = np.array([[0.0, 0.0], [4.0, 0.0], [2.0, 0.0]])  # zero area dst
    mesh = TriangleMesh(simplices=np.array([[0, 1, 2]]), num_points=3)
    with caplog.at_level(logging.WARNING):
        out = warp_to_landmarks(img, pts, collapsed, mesh)
    assert "degenerate" in caplog.text
    np.testing.assert_array_equal(out, img)  # identity fallback everywhere


def test_warp_count_mismatch(face_pair):
    img, lms, _, _ = face_pair
    mesh = triangulate(lms, lms.image_size)
    with pytest.raises(StructuralError):
        warp_to_landmarks(img, lms.all_points[:-1], lms, mesh)


# ---------------------------------------------------------------------------
# blend


def test_blend_endpoints(rng):
    a = rng.random((8, 8, 3))
    b = rng.random((8, 8, 3))
    np.testing.assert_array_equal(blend(a, b, 0.0), a)
    np.testing.assert_array_equal(blend(a, b, 1.0), b)


def test_blend_arithmetic():
    a = np.full((4, 4, 3), 0.2)
    b = np.full((4, 4, 3), 0.6)
    np.testing.assert_allclose(blend(a, b, 0.5), 0.4)


def test_blend_dim_mismatch():
    with pytest.raises(StructuralError):
        blend(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)), 0.5)


@settings(max_examples=30, deadline=None)
@given(alpha=st.floats(0.0, 1.0), seed=st.integers(0, 2**16))
def test_blend_swap_symmetry_and_convexity(alpha, seed):
    r = np.random.default_rng(seed)
    a = r.random((6, 6, 3))
    b = r.random((6, 6, 3))
    out = blend(a, b, alpha)
    np.testing.assert_allclose(out, blend(b, a, 1.0 - alpha), atol=1e-12)
    assert (out >= np.minimum(a, b) - 1e-12).all()
    assert (out <= np.maximum(a, b) + 1e-12).all()


# ---------------------------------------------------------------------------
# create_morph


def test_create_morph_of_subject_with_itself(face_pair):
    img, lms, _, _ = face_pair
    rec = create_morph(img, img, lms, lms, MorphParams(0.3, 0.8), ("a", "a"))
    assert np.abs(rec.morph_image - img).max() <= QUANT


def test_create_morph_degenerate_params(face_pair):
    i1, l1, i2, l2 = face_pair
    rec = create_morph(i1, i2, l1, l2, MorphParams(0.0, 0.0), ("a", "b"))
    assert np.abs(rec.morph_image - i1).max() <= QUANT


def test_create_morph_composition_oracle(face_pair):
    # recompose the pipeline by hand: average, mesh, two warps, pixel mean
    i1, l1, i2, l2 = face_pair
    rec = create_morph(i1, i2, l1, l2, MorphParams(0.5, 0.5), ("a", "b"))
    avg = average_landmarks(l1, l2, 0.5)
    mesh = triangulate(avg, avg.image_size)
    w1 = warp_to_landmarks(i1, l1, avg, mesh)
    w2 = warp_to_landmarks(i2, l2, avg, mesh)
    np.testing.assert_allclose(rec.morph_image, 0.5 * (w1 + w2), atol=1e-6)


def test_create_morph_convexity_after_alignment(face_pair):
    i1, l1, i2, l2 = face_pair
    params = MorphParams(0.5, 0.35)
    rec = create_morph(i1, i2, l1, l2, params, ("a", "b"))
    avg = average_landmarks(l1, l2, 0.5)
    mesh = triangulate(avg, avg.image_size)
    w1 = warp_to_landmarks(i1, l1, avg, mesh)
    w2 = warp_to_landmarks(i2, l2, avg, mesh)
    assert (rec.morph_image >= np.minimum(w1, w2) - 1e-9).all()
    assert (rec.morph_image <= np.maximum(w1, w2) + 1e-9).all()


def test_morph_params_clamped():
    p = MorphParams(warp_fraction=-0.5, blend_alpha=1.5)
    assert p.warp_fraction == 0.0
    assert p.blend_alpha == 1.0


def test_create_morph_size_mismatch(face_pair):
    i1, l1, _, _ = face_pair
    with pytest.raises(StructuralError):
        create_morph(i1, np.zeros((32, 32, 3)), l1, l1, MorphParams(), ("a", "b"))


# ---------------------------------------------------------------------------
# sidecar files


def test_landmark_sidecar_roundtrip(tmp_path, rng):
    lms = random_landmarks(rng, 12, (48, 48))
    path = tmp_path / "face.landmarks.txt"
    write_landmarks(lms, path)
    loaded = read_landmarks(path, (48, 48))
    np.testing.assert_allclose(loaded.points, lms.points, atol=1e-5)
    assert len(loaded.frame_anchors) == 8
