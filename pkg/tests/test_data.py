import numpy as np
import pytest

from demorphlab.data import (
    SAMPLE_MANIFEST_HEADER,
    SampleRecord,
    SplitSpec,
    bilinear_resize,
    iter_batches,
    load_manifest,
    preprocess,
    split_summary,
    subject_disjoint_split,
    write_manifest,
)
from demorphlab.errors import ManifestError, SplitError, StructuralError

HEADER = ",".join(SAMPLE_MANIFEST_HEADER)


def make_manifest(tmp_path, rows, name="samples.csv"):
    path = tmp_path / name
    path.write_text(HEADER + "\n" + "\n".join(rows) + ("\n" if rows else ""))
    return path


def make_records(pairs):
    """(label, (s1, s2)) tuples -> records with fake paths."""
    records = []
    for n, (label, subjects) in enumerate(pairs):
        records.append(
            SampleRecord(
                input_path=f"in_{n}.png",
                gt1_path=f"gt1_{n}.png",
                gt2_path=f"gt2_{n}.png",
                label=label,
                subject_ids=subjects,
            )
        )
    return records


# ---------------------------------------------------------------------------
# manifest loading


def test_empty_manifest(tmp_path):
    path = make_manifest(tmp_path, [])
    assert load_manifest(path) == []


def test_946_row_manifest(tmp_path):
    rows = [
        f"m{i}.png,a{i}.png,b{i}.png,morphed,s{i % 80},t{i % 80}" for i in range(946)
    ]
    path = make_manifest(tmp_path, rows)
    records = load_manifest(path)
    assert len(records) == 946


def test_blank_gt_duplicate_convention(tmp_path):
    path = make_manifest(tmp_path, ["x.png,,,non_morphed,s1,s1"])
    (rec,) = load_manifest(path)
    assert rec.gt1_path == rec.gt2_path == rec.input_path
    assert rec.input_path == (tmp_path / "x.png").resolve()


def test_paths_resolve_relative_to_manifest(tmp_path):
    sub = tmp_path / "deep"
    sub.mkdir()
    path = make_manifest(sub, ["m.png,../a.png,b.png,morphed,s1,s2"])
    (rec,) = load_manifest(path)
    assert rec.input_path == (sub / "m.png").resolve()
    assert rec.gt1_path == (tmp_path / "a.png").resolve()


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "nope.csv")


def test_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_malformed_row_reports_index(tmp_path):
    rows = [
        "m0.png,a.png,b.png,morphed,s1,s2",
        "m1.png,,b.png,morphed,s1,s2",  # morphed without gt1
    ]
    path = make_manifest(tmp_path, rows)
    with pytest.raises(ManifestError, match="row 2"):
        load_manifest(path)


def test_morphed_needs_distinct_subjects(tmp_path):
    path = make_manifest(tmp_path, ["m.png,a.png,b.png,morphed,s1,s1"])
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_roundtrip(tmp_path):
    rows = [
        "m0.png,a.png,b.png,morphed,s1,s2",
        "n0.png,,,non_morphed,s3,s3",
    ]
    records = load_manifest(make_manifest(tmp_path, rows))
    out = tmp_path / "copy" / "again.csv"
    write_manifest(records, out)
    # written paths are relative where possible, absolute otherwise
    again = load_manifest(out)
    assert [r.label for r in again] == [r.label for r in records]
    assert [r.input_path for r in again] == [r.input_path for r in records]


# ---------------------------------------------------------------------------
# subject-disjoint split


def test_split_single_subject_errors():
    records = make_records([("non_morphed", ("s1", "s1"))] * 3)
    with pytest.raises(SplitError):
        subject_disjoint_split(records, SplitSpec())


def test_split_10_subjects_seed_reproducible():
    records = make_records(
        [("non_morphed", (f"s{i}", f"s{i}")) for i in range(10)]
    )
    spec = SplitSpec(train_fraction=0.7, seed=99)
    train_a, test_a = subject_disjoint_split(records, spec)
    train_b, test_b = subject_disjoint_split(records, spec)
    assert len({r.subject_ids[0] for r in train_a}) == 7
    assert train_a == train_b and test_a == test_b  # byte-identical rerun
    other_train, _ = subject_disjoint_split(records, SplitSpec(0.7, seed=100))
    assert other_train != train_a or True  # different seed may differ; determinism is the claim


def test_split_straddling_morph_goes_to_test():
    records = make_records(
        [("non_morphed", (f"s{i}", f"s{i}")) for i in range(10)]
        + [("morphed", (f"s{i}", f"s{j}")) for i in range(10) for j in range(i + 1, 10)]
    )
    train, test = subject_disjoint_split(records, SplitSpec(0.7, seed=5))
    train_subjects = {s for r in train for s in r.subject_ids}
    test_subjects = {s for r in test for s in r.subject_ids}
    for r in records:
        subs = set(r.subject_ids)
        if subs & train_subjects and subs - train_subjects:
            assert r in test  # straddlers always land in test


def test_split_disjointness_property(rng):
    for trial in range(20):
        n_sub = int(rng.integers(2, 12))
        subjects = [f"s{i}" for i in range(n_sub)]
        pairs = []
        for _ in range(30):
            if rng.random() < 0.4:
                s = subjects[rng.integers(n_sub)]
                pairs.append(("non_morphed", (s, s)))
            else:
                i, j = rng.choice(n_sub, size=2, replace=False)
                pairs.append(("morphed", (subjects[i], subjects[j])))
        train, test = subject_disjoint_split(
            make_records(pairs), SplitSpec(0.6, seed=int(rng.integers(1 << 30)))
        )
        train_subjects = {s for r in train for s in r.subject_ids}
        test_subjects = {s for r in test for s in r.subject_ids}
        assert not (train_subjects & test_subjects)
        assert len(train) + len(test) == len(pairs)


def test_split_summary_format():
    records = make_records(
        [("morphed", ("s1", "s2")), ("non_morphed", ("s3", "s3"))]
    )
    train, test = subject_disjoint_split(records, SplitSpec(0.7, seed=1))
    text = split_summary(train, test)
    assert text.startswith("split,kind,subjects,images")
    assert "train,morphed" in text and "test,non_morphed" in text


# ---------------------------------------------------------------------------
# preprocess


def test_preprocess_noop():
    img = np.random.default_rng(0).random((16, 16, 3))
    out = preprocess(img, (16, 16))
    np.testing.assert_array_equal(out, img)


def test_preprocess_uniform_downscale():
    img = np.full((512, 512, 3), 0.42)
    out = preprocess(img, (256, 256))
    assert out.shape == (256, 256, 3)
    np.testing.assert_allclose(out, 0.42, atol=1e-12)


def test_preprocess_checkerboard_oracle():
    # hand-computed: each 2x2 block of the checkerboard averages to 0.5
    img = np.zeros((4, 4, 3))
    img[::2, 1::2] = 1.0
    img[1::2, ::2] = 1.0
    out = preprocess(img, (2, 2))
    np.testing.assert_allclose(out, 0.5, atol=1e-12)


def test_bilinear_resize_matches_torch():
    import torch
    import torch.nn.functional as F

    img = np.random.default_rng(3).random((13, 9, 3))
    ours = bilinear_resize(img, (7, 5))
    t = torch.from_numpy(img.transpose(2, 0, 1)).unsqueeze(0)
    theirs = F.interpolate(t, size=(7, 5), mode="bilinear", align_corners=False)
    np.testing.assert_allclose(
        ours, theirs[0].numpy().transpose(1, 2, 0), atol=1e-12
    )


def test_preprocess_crop_box():
    img = np.random.default_rng(1).random((16, 16, 3))
    out = preprocess(img, (4, 4), crop_box=(2, 3, 4, 4))
    np.testing.assert_array_equal(out, img[2:6, 3:7])


def test_preprocess_crop_hook():
    img = np.random.default_rng(1).random((16, 16, 3))
    out = preprocess(img, (8, 8), crop_hook=lambda im: (0, 0, 8, 8))
    np.testing.assert_array_equal(out, img[:8, :8])


def test_preprocess_invalid_crop():
    img = np.zeros((8, 8, 3))
    with pytest.raises(StructuralError):
        preprocess(img, (4, 4), crop_box=(6, 6, 4, 4))


# ---------------------------------------------------------------------------
# batching


def test_batching_preserves_sample_count(synthetic_dataset):
    records = load_manifest(synthetic_dataset["test"])
    batches = list(iter_batches(records, batch_size=3, image_size=(32, 32)))
    assert sum(b.inputs.shape[0] for b in batches) == len(records)
    for b in batches:
        assert b.inputs.shape == b.gt1.shape == b.gt2.shape
        assert len(b.labels) == b.inputs.shape[0]
        assert b.inputs.min() >= 0.0 and b.inputs.max() <= 1.0
