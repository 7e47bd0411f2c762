"""Procedural face-like images with known landmarks.

Deterministic stand-ins for real face data: each subject id maps to a fixed
set of shape/color parameters, an image rendered from them, and the matching
landmark set. Good enough to exercise morphing, training, and evaluation
end to end without shipping any dataset.
"""

import csv
from pathlib import Path

import numpy as np
from scipy import ndimage

from .image_io import save_image
from .morphing import LandmarkSet, MorphParams, create_morph, write_landmarks

SAMPLE_MANIFEST_HEADER = [
    "input_path",
    "gt1_path",
    "gt2_path",
    "label",
    "subject1_id",
    "subject2_id",
]


def _ellipse_mask(shape, cx, cy, rx, ry):
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    return ((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 <= 1.0


def _paint(img, mask, color):
    img[mask] = color


def synthetic_face(subject_seed: int, image_size=(64, 64), expression: float = 0.0):
    """Render one synthetic face.

    Returns (image, LandmarkSet). `expression` in [-1, 1] nudges the mouth
    and eye openness so one subject can have several captures.
    """
    h, w = image_size
    rng = np.random.default_rng(int(subject_seed))
    s = min(h, w)

    # identity parameters, all in frame-relative units
    cx = w / 2 + rng.uniform(-0.02, 0.02) * s
    cy = h / 2 + rng.uniform(-0.02, 0.02) * s
    face_rx = rng.uniform(0.26, 0.34) * s
    face_ry = rng.uniform(0.34, 0.42) * s
    skin = np.array([rng.uniform(0.55, 0.9), rng.uniform(0.42, 0.75), rng.uniform(0.3, 0.62)])
    hair = rng.uniform(0.05, 0.5, size=3)
    background = rng.uniform(0.65, 0.95, size=3)
    eye_dx = rng.uniform(0.38, 0.52) * face_rx
    eye_y = cy - rng.uniform(0.18, 0.30) * face_ry
    eye_rx = rng.uniform(0.10, 0.14) * s
    eye_ry = (rng.uniform(0.045, 0.07) + 0.01 * expression) * s
    iris = np.array([rng.uniform(0.05, 0.45), rng.uniform(0.1, 0.5), rng.uniform(0.15, 0.65)])
    brow_dy = rng.uniform(0.10, 0.16) * s
    brow_h = rng.uniform(0.015, 0.03) * s
    nose_len = rng.uniform(0.16, 0.24) * s
    nose_w = rng.uniform(0.03, 0.06) * s
    mouth_y = cy + rng.uniform(0.42, 0.58) * face_ry
    mouth_rx = rng.uniform(0.12, 0.2) * s
    mouth_ry = (rng.uniform(0.03, 0.06) + 0.015 * expression) * s
    mouth_color = np.array([rng.uniform(0.5, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.15, 0.35)])

    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = background
    _paint(img, _ellipse_mask((h, w), cx, cy - face_ry * 0.55, face_rx * 1.12, face_ry * 0.75), hair)
    _paint(img, _ellipse_mask((h, w), cx, cy, face_rx, face_ry), skin)

    for side in (-1.0, 1.0):
        ex = cx + side * eye_dx
        _paint(img, _ellipse_mask((h, w), ex, eye_y, eye_rx, eye_ry), np.array([0.95, 0.95, 0.95]))
        _paint(img, _ellipse_mask((h, w), ex, eye_y, eye_ry * 0.8, eye_ry * 0.8), iris)
        brow = _ellipse_mask((h, w), ex, eye_y - brow_dy, eye_rx * 1.1, brow_h)
        _paint(img, brow, hair * 0.6)

    nose_tip_y = eye_y + nose_len
    _paint(img, _ellipse_mask((h, w), cx, nose_tip_y - nose_len * 0.3, nose_w, nose_len * 0.5), skin * 0.82)
    _paint(img, _ellipse_mask((h, w), cx, mouth_y, mouth_rx, mouth_ry), mouth_color)

    # soften hard shape edges so warping/blending behaves like photographs
    img = ndimage.uniform_filter(img, size=(3, 3, 1), mode="nearest")
    img = np.clip(img, 0.0, 1.0)

    # landmark layout mirrors the painted geometry
    oval = []
    for ang_deg in (90, 45, 0, -45, -90, -135, 180, 135):
        a = np.deg2rad(ang_deg)
        oval.append((cx + face_rx * np.cos(a), cy + face_ry * np.sin(a)))
    points = oval + [
        (cx - eye_dx - eye_rx, eye_y),  # left eye outer
        (cx - eye_dx + eye_rx, eye_y),  # left eye inner
        (cx + eye_dx - eye_rx, eye_y),  # right eye inner
        (cx + eye_dx + eye_rx, eye_y),  # right eye outer
        (cx - eye_dx, eye_y),           # eye centers
        (cx + eye_dx, eye_y),
        (cx - eye_dx, eye_y - brow_dy),  # brows
        (cx + eye_dx, eye_y - brow_dy),
        (cx, eye_y + nose_len * 0.3),    # nose bridge
        (cx - nose_w, nose_tip_y),       # nostrils
        (cx + nose_w, nose_tip_y),
        (cx, nose_tip_y),                # nose tip
        (cx - mouth_rx, mouth_y),        # mouth corners / lips
        (cx + mouth_rx, mouth_y),
        (cx, mouth_y - mouth_ry),
        (cx, mouth_y + mouth_ry),
    ]
    pts = np.clip(np.array(points, dtype=np.float64), 0.0, [w - 1.0, h - 1.0])
    return img, LandmarkSet(points=pts, image_size=(h, w))


def write_sample_manifest(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SAMPLE_MANIFEST_HEADER)
        writer.writerows(rows)


def build_synthetic_dataset(
    out_dir,
    n_subjects: int = 6,
    n_morphs: int = 8,
    image_size=(64, 64),
    seed: int = 0,
    n_nonmorphed: int = 4,
):
    """Write a self-contained synthetic morph dataset.

    Emits subject images with landmark sidecars, morphs of random distinct
    subject pairs, a `train.csv` sample manifest (morphs only) and a
    `test.csv` manifest (morphs plus non-morphed subject images following
    the duplicate convention). Returns (train_manifest, test_manifest).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    subject_paths = {}
    landmarks = {}
    images = {}
    for k in range(n_subjects):
        sid = f"s{k:03d}"
        img, lms = synthetic_face(seed * 1000 + k, image_size)
        path = out_dir / f"subject_{sid}.png"
        save_image(img, path)
        write_landmarks(lms, out_dir / f"subject_{sid}.landmarks.txt")
        subject_paths[sid] = path
        landmarks[sid] = lms
        images[sid] = img

    sids = sorted(subject_paths)
    pairs = [(a, b) for i, a in enumerate(sids) for b in sids[i + 1 :]]
    order = rng.permutation(len(pairs))
    chosen = [pairs[i] for i in order[:n_morphs]]
    if len(chosen) < n_morphs:
        raise ValueError(f"{n_subjects} subjects give only {len(pairs)} pairs")

    train_rows = []
    test_rows = []
    for n, (sa, sb) in enumerate(chosen):
        record = create_morph(
            images[sa], images[sb], landmarks[sa], landmarks[sb], MorphParams(), (sa, sb)
        )
        morph_path = out_dir / f"morph_{n:03d}_{sa}_{sb}.png"
        save_image(record.morph_image, morph_path)
        row = [
            morph_path.name,
            subject_paths[sa].name,
            subject_paths[sb].name,
            "morphed",
            sa,
            sb,
        ]
        train_rows.append(row)
        test_rows.append(row)

    for sid in sids[:n_nonmorphed]:
        name = subject_paths[sid].name
        test_rows.append([name, name, name, "non_morphed", sid, sid])

    train_manifest = out_dir / "train.csv"
    test_manifest = out_dir / "test.csv"
    write_sample_manifest(train_rows, train_manifest)
    write_sample_manifest(test_rows, test_manifest)
    return train_manifest, test_manifest
