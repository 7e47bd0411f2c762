"""Landmark-based face morph synthesis.

A morph is built in three steps: average the two landmark sets, warp both
source images onto the averaged geometry (piecewise-affine over a Delaunay
mesh), then blend pixels linearly. All images are H x W x 3 float arrays in
[0, 1]; landmark coordinates are (x, y) pixel positions.

Eight frame anchors (corners plus edge midpoints of the pixel-center
rectangle) are appended after the facial points so the mesh tiles the whole
frame and the background warps smoothly with the face.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import DegenerateGeometryError, ManifestError, StructuralError
from .image_io import load_image, save_image

log = logging.getLogger(__name__)

# Destination triangles with twice-area below this are skipped with a warning.
MIN_TRIANGLE_AREA = 1e-9

MORPH_MANIFEST_HEADER = [
    "morph_path",
    "source1_path",
    "source2_path",
    "subject1_id",
    "subject2_id",
    "warp_fraction",
    "blend_alpha",
]


def frame_anchor_points(image_size) -> np.ndarray:
    """The 8 fixed boundary anchors for an (H, W) frame: 4 corners + 4 edge
    midpoints of the pixel-center rectangle [0, W-1] x [0, H-1]."""
    h, w = image_size
    x0, x1, xm = 0.0, float(w - 1), (w - 1) / 2.0
    y0, y1, ym = 0.0, float(h - 1), (h - 1) / 2.0
    return np.array(
        [
            [x0, y0], [x1, y0], [x0, y1], [x1, y1],  # corners
            [xm, y0], [xm, y1], [x0, ym], [x1, ym],  # edge midpoints
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class LandmarkSet:
    """Ordered facial landmarks plus the 8 frame anchors for one image.

    `points` holds the facial landmarks only; `frame_anchors` is derived
    from `image_size` and always appended last.
    """

    points: np.ndarray  # (N, 2) float, (x, y)
    image_size: tuple  # (H, W)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", pts)
        h, w = self.image_size
        if pts.size and (
            pts[:, 0].min() < 0
            or pts[:, 1].min() < 0
            or pts[:, 0].max() >= w
            or pts[:, 1].max() >= h
        ):
            raise StructuralError(
                f"landmarks outside image bounds [0,{w})x[0,{h})"
            )

    @property
    def frame_anchors(self) -> np.ndarray:
        return frame_anchor_points(self.image_size)

    @property
    def all_points(self) -> np.ndarray:
        """Facial points with the 8 frame anchors appended."""
        return np.vstack([self.points, self.frame_anchors])

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class MorphParams:
    """Interpolation weights toward identity 2; both clamped to [0, 1]."""

    warp_fraction: float = 0.5
    blend_alpha: float = 0.5

    def __post_init__(self):
        object.__setattr__(
            self, "warp_fraction", float(np.clip(self.warp_fraction, 0.0, 1.0))
        )
        object.__setattr__(
            self, "blend_alpha", float(np.clip(self.blend_alpha, 0.0, 1.0))
        )


@dataclass
class MorphRecord:
    """A finished morph plus everything needed to supervise de-morphing."""

    morph_image: np.ndarray
    source_1: np.ndarray
    source_2: np.ndarray
    params: MorphParams
    subject_ids: tuple


@dataclass(frozen=True)
class TriangleMesh:
    """Delaunay simplices as index triples into a landmark point list."""

    simplices: np.ndarray  # (T, 3) int
    num_points: int

    def __post_init__(self):
        object.__setattr__(
            self, "simplices", np.asarray(self.simplices, dtype=np.int64)
        )


def _as_points(landmarks) -> np.ndarray:
    """Accept a LandmarkSet (facial + anchors) or a raw (N, 2) array."""
    if isinstance(landmarks, LandmarkSet):
        return landmarks.all_points
    return np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)


def average_landmarks(l1: LandmarkSet, l2: LandmarkSet, warp_fraction: float) -> LandmarkSet:
    """Pointwise interpolation (1-w)*l1 + w*l2 of the facial landmarks.

    Frame anchors are carried over unchanged (they are identical for
    same-sized images by construction).
    """
    if len(l1) != len(l2):
        raise StructuralError(
            f"landmark count mismatch: {len(l1)} vs {len(l2)}"
        )
    if tuple(l1.image_size) != tuple(l2.image_size):
        raise StructuralError(
            f"image size mismatch: {l1.image_size} vs {l2.image_size}"
        )
    w = float(warp_fraction)
    pts = (1.0 - w) * l1.points + w * l2.points
    return LandmarkSet(points=pts, image_size=tuple(l1.image_size))


def triangulate(landmarks, image_size=None) -> TriangleMesh:
    """Delaunay triangulation over the landmark points.

    Duplicate points are collapsed before triangulating; simplex indices
    refer to the original (uncollapsed) point order, keeping the mesh valid
    for any same-length landmark set.
    """
    pts = _as_points(landmarks)
    if isinstance(landmarks, LandmarkSet) and image_size is not None:
        if tuple(landmarks.image_size) != tuple(image_size):
            raise StructuralError(
                f"landmark frame {landmarks.image_size} != image size {tuple(image_size)}"
            )
    if len(pts) < 3:
        raise DegenerateGeometryError(f"need >=3 points, got {len(pts)}")
    unique_pts, first_idx = np.unique(pts, axis=0, return_index=True)
    if len(unique_pts) < len(pts):
        log.warning(
            "collapsed %d duplicate landmark(s) before triangulation",
            len(pts) - len(unique_pts),
        )
    if len(unique_pts) < 3:
        raise DegenerateGeometryError("fewer than 3 distinct points")
    try:
        tri = Delaunay(unique_pts)
    except QhullError as exc:
        raise DegenerateGeometryError(f"degenerate point set: {exc}") from exc
    if tri.simplices.size == 0:
        raise DegenerateGeometryError("triangulation produced no simplices")
    simplices = first_idx[tri.simplices]
    return TriangleMesh(simplices=simplices, num_points=len(pts))


def triangle_areas(points, mesh: TriangleMesh) -> np.ndarray:
    """Unsigned area of each mesh triangle over the given point list."""
    pts = _as_points(points)
    tris = pts[mesh.simplices]  # (T, 3, 2)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    return 0.5 * np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
        - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    )


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sampling at float (x, y) positions, clamping to edge pixels."""
    h, w = img.shape[:2]
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    tx = xs - x0
    ty = ys - y0
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, w - 1)
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, h - 1)
    tx = tx[..., None]
    ty = ty[..., None]
    top = img[y0i, x0i] * (1.0 - tx) + img[y0i, x1i] * tx
    bot = img[y1i, x0i] * (1.0 - tx) + img[y1i, x1i] * tx
    return top * (1.0 - ty) + bot * ty


def warp_to_landmarks(img: np.ndarray, src, dst, mesh: TriangleMesh) -> np.ndarray:
    """Piecewise-affine warp of `img` from `src` geometry to `dst` geometry.

    For every destination pixel inside a mesh triangle, the matching source
    position is the same barycentric combination of the source triangle,
    sampled bilinearly. Pixels outside every triangle (possible only for
    partial meshes) are copied through unchanged.
    """
    img = np.asarray(img, dtype=np.float64)
    src_pts = _as_points(src)
    dst_pts = _as_points(dst)
    if len(src_pts) != len(dst_pts):
        raise StructuralError(
            f"src/dst point count mismatch: {len(src_pts)} vs {len(dst_pts)}"
        )
    if mesh.simplices.size and mesh.simplices.max() >= len(dst_pts):
        raise StructuralError("mesh indices exceed landmark count")

    h, w = img.shape[:2]
    out = np.zeros_like(img)
    written = np.zeros((h, w), dtype=bool)
    eps = 1e-9

    for tri in mesh.simplices:
        d0, d1, d2 = dst_pts[tri]
        e1 = d1 - d0
        e2 = d2 - d0
        det = e1[0] * e2[1] - e2[0] * e1[1]
        if abs(det) < 2.0 * MIN_TRIANGLE_AREA:
            log.warning("skipping degenerate destination triangle %s", tri)
            continue
        xs_lo = max(0, int(np.floor(min(d0[0], d1[0], d2[0]))))
        xs_hi = min(w - 1, int(np.ceil(max(d0[0], d1[0], d2[0]))))
        ys_lo = max(0, int(np.floor(min(d0[1], d1[1], d2[1]))))
        ys_hi = min(h - 1, int(np.ceil(max(d0[1], d1[1], d2[1]))))
        if xs_lo > xs_hi or ys_lo > ys_hi:
            continue
        gy, gx = np.mgrid[ys_lo : ys_hi + 1, xs_lo : xs_hi + 1]
        px = gx.astype(np.float64) - d0[0]
        py = gy.astype(np.float64) - d0[1]
        # Barycentric weights via the inverse of the triangle edge matrix.
        w1 = (px * e2[1] - py * e2[0]) / det
        w2 = (py * e1[0] - px * e1[1]) / det
        inside = (w1 >= -eps) & (w2 >= -eps) & (w1 + w2 <= 1.0 + eps)
        inside &= ~written[gy, gx]
        if not inside.any():
            continue
        s0, s1, s2 = src_pts[tri]
        w1i = w1[inside]
        w2i = w2[inside]
        sx = s0[0] + w1i * (s1[0] - s0[0]) + w2i * (s2[0] - s0[0])
        sy = s0[1] + w1i * (s1[1] - s0[1]) + w2i * (s2[1] - s0[1])
        out[gy[inside], gx[inside]] = sample_bilinear(img, sx, sy)
        written[gy[inside], gx[inside]] = True

    if not written.all():
        out[~written] = img[~written]
    return np.clip(out, 0.0, 1.0)


def blend(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """(1-alpha)*a + alpha*b, elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise StructuralError(f"blend shape mismatch: {a.shape} vs {b.shape}")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise StructuralError(f"blend alpha {alpha} outside [0,1]")
    return np.clip((1.0 - alpha) * a + alpha * b, 0.0, 1.0)


def create_morph(
    i1: np.ndarray,
    i2: np.ndarray,
    l1: LandmarkSet,
    l2: LandmarkSet,
    params: MorphParams = MorphParams(),
    subject_ids=("s1", "s2"),
) -> MorphRecord:
    """Warp both sources to the averaged landmark frame, then blend."""
    i1 = np.asarray(i1, dtype=np.float64)
    i2 = np.asarray(i2, dtype=np.float64)
    if i1.shape != i2.shape:
        raise StructuralError(f"source shape mismatch: {i1.shape} vs {i2.shape}")
    if tuple(l1.image_size) != i1.shape[:2] or tuple(l2.image_size) != i2.shape[:2]:
        raise StructuralError("landmark frame does not match image size")
    avg = average_landmarks(l1, l2, params.warp_fraction)
    mesh = triangulate(avg, avg.image_size)
    warped_1 = warp_to_landmarks(i1, l1, avg, mesh)
    warped_2 = warp_to_landmarks(i2, l2, avg, mesh)
    morph = blend(warped_1, warped_2, params.blend_alpha)
    return MorphRecord(
        morph_image=morph,
        source_1=i1,
        source_2=i2,
        params=params,
        subject_ids=tuple(subject_ids),
    )


# --------------------------------------------------------------------------
# Landmark sidecar files and morph manifests


def landmark_sidecar_path(image_path) -> Path:
    """Default sidecar location: `<image stem>.landmarks.txt` next to it."""
    image_path = Path(image_path)
    return image_path.with_name(image_path.stem + ".landmarks.txt")


def read_landmarks(path, image_size) -> LandmarkSet:
    """Read a sidecar file: one `x y` float pair per line, facial points only."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"landmark sidecar not found: {path}")
    pts = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ManifestError(f"{path}:{lineno}: expected `x y`, got {line!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: non-numeric coordinate") from exc
    return LandmarkSet(points=np.array(pts, dtype=np.float64), image_size=tuple(image_size))


def write_landmarks(landmarks: LandmarkSet, path) -> None:
    """Write facial points (no frame anchors) as `x y` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{x:.6f} {y:.6f}" for x, y in landmarks.points]
    path.write_text("\n".join(lines) + "\n")


@dataclass
class MorphPairSpec:
    """One row of a pair manifest driving batch morph synthesis."""

    image1_path: Path
    image2_path: Path
    subject1_id: str
    subject2_id: str
    landmarks1_path: Path = None
    landmarks2_path: Path = None
    params: MorphParams = field(default_factory=MorphParams)


def read_pair_manifest(path) -> list:
    """Parse a pair manifest.

    Required columns: image1_path, image2_path, subject1_id, subject2_id.
    Optional: landmarks1_path, landmarks2_path (default to the image's
    sidecar), warp_fraction, blend_alpha (default 0.5). Paths resolve
    relative to the manifest directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"pair manifest not found: {path}")
    base = path.parent
    required = ["image1_path", "image2_path", "subject1_id", "subject2_id"]
    specs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(required) <= set(reader.fieldnames):
            raise ManifestError(
                f"{path}: header must contain {','.join(required)}"
            )
        for idx, row in enumerate(reader, start=1):
            try:
                img1 = (base / row["image1_path"]).resolve()
                img2 = (base / row["image2_path"]).resolve()
                lm1 = row.get("landmarks1_path") or ""
                lm2 = row.get("landmarks2_path") or ""
                params = MorphParams(
                    warp_fraction=float(row.get("warp_fraction") or 0.5),
                    blend_alpha=float(row.get("blend_alpha") or 0.5),
                )
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}: malformed row {idx}: {exc}") from exc
            specs.append(
                MorphPairSpec(
                    image1_path=img1,
                    image2_path=img2,
                    subject1_id=row["subject1_id"],
                    subject2_id=row["subject2_id"],
                    landmarks1_path=(base / lm1).resolve() if lm1 else landmark_sidecar_path(img1),
                    landmarks2_path=(base / lm2).resolve() if lm2 else landmark_sidecar_path(img2),
                    params=params,
                )
            )
    return specs


def write_morph_manifest(rows, path) -> None:
    """Write the morph output manifest (header + one row per morph)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MORPH_MANIFEST_HEADER)
        writer.writerows(rows)


def synthesize_morphs(specs, out_dir) -> Path:
    """Create one morph per pair spec; write images plus the output manifest.

    Returns the manifest path. Each operation is a pure function of its
    inputs and every morph gets a distinct file, so callers may fan this
    loop out across workers if they need to.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n, spec in enumerate(specs):
        i1 = load_image(spec.image1_path)
        i2 = load_image(spec.image2_path)
        l1 = read_landmarks(spec.landmarks1_path, i1.shape[:2])
        l2 = read_landmarks(spec.landmarks2_path, i2.shape[:2])
        record = create_morph(
            i1, i2, l1, l2, spec.params, (spec.subject1_id, spec.subject2_id)
        )
        morph_path = out_dir / f"morph_{n:04d}_{spec.subject1_id}_{spec.subject2_id}.png"
        save_image(record.morph_image, morph_path)
        rows.append(
            [
                morph_path.name,
                str(spec.image1_path),
                str(spec.image2_path),
                spec.subject1_id,
                spec.subject2_id,
                f"{record.params.warp_fraction:g}",
                f"{record.params.blend_alpha:g}",
            ]
        )
    manifest_path = out_dir / "morphs.csv"
    write_morph_manifest(rows, manifest_path)
    return manifest_path
