"""Biometric evaluation of de-morphing outputs.

Builds a per-sample score table (output-to-input distances plus, where
ground truth exists, the four output-to-identity similarities), then
derives distance distributions, d-prime separation between the morphed and
non-morphed populations, cross-road genuine-pair assignment, and TMR at a
fixed FMR. Histogram plots mirror the score-distribution figures.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError, ManifestError
from .image_io import load_image

DIRECT = "direct"
SWAPPED = "swapped"

SCORE_TABLE_HEADER = [
    "sample_id",
    "label",
    "d_o1_x",
    "d_o2_x",
    "avg_d",
    "s_id1_o1",
    "s_id2_o2",
    "s_id1_o2",
    "s_id2_o1",
]


@dataclass
class ScoreRow:
    sample_id: str
    label: str
    d_o1_x: float
    d_o2_x: float
    avg_d: float
    s_id1_o1: float = None
    s_id2_o2: float = None
    s_id1_o2: float = None
    s_id2_o1: float = None

    @property
    def has_identity_scores(self) -> bool:
        return self.s_id1_o1 is not None


@dataclass
class PairAssignment:
    """Which (identity, output) couplings count as genuine for one sample."""

    genuine_pairs: tuple  # two ((identity, output)) index couplings
    decision: str  # direct | swapped


def crossroad_pair_assignment(s11, s22, s12, s21) -> PairAssignment:
    """Pick the genuine couplings by the larger similarity-sum; tie -> direct."""
    for v in (s11, s22, s12, s21):
        if not np.isfinite(v):
            raise EvaluationError(f"non-finite similarity score {v}")
    if s11 + s22 >= s12 + s21:
        return PairAssignment(genuine_pairs=((1, 1), (2, 2)), decision=DIRECT)
    return PairAssignment(genuine_pairs=((1, 2), (2, 1)), decision=SWAPPED)


def score_demorph_outputs(results, comparator, preprocess_fn=None) -> list:
    """One ScoreRow per DemorphResult.

    Ground-truth similarity columns are filled whenever the result carries
    identity references (non-morphed samples get them too, through the
    duplicate convention). `preprocess_fn` maps a loaded ground-truth image
    to model resolution; identity images are assumed pre-aligned otherwise.
    """
    import torch

    rows = []
    for res in results:
        avg_d = (res.d_o1_input + res.d_o2_input) / 2.0
        row = ScoreRow(
            sample_id=res.sample_id or f"sample_{len(rows)}",
            label=res.label or "morphed",
            d_o1_x=res.d_o1_input,
            d_o2_x=res.d_o2_input,
            avg_d=avg_d,
        )
        if res.label == "morphed" and (res.gt1_path is None or res.gt2_path is None):
            raise ManifestError(f"morphed sample {row.sample_id} lacks ground truth")
        if res.gt1_path is not None and res.gt2_path is not None:
            def to_tensor(img):
                if preprocess_fn is not None:
                    img = preprocess_fn(img)
                return torch.from_numpy(
                    np.ascontiguousarray(img.transpose(2, 0, 1))
                ).float().unsqueeze(0)

            id1 = to_tensor(load_image(res.gt1_path))
            id2 = to_tensor(load_image(res.gt2_path))
            o1 = to_tensor(res.output_1)
            o2 = to_tensor(res.output_2)
            with torch.no_grad():
                row.s_id1_o1 = float(comparator.similarity(id1, o1)[0])
                row.s_id2_o2 = float(comparator.similarity(id2, o2)[0])
                row.s_id1_o2 = float(comparator.similarity(id1, o2)[0])
                row.s_id2_o1 = float(comparator.similarity(id2, o1)[0])
        rows.append(row)
    return rows


def write_score_table(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_TABLE_HEADER)
        for r in rows:
            writer.writerow(
                [r.sample_id, r.label]
                + [f"{v:.10g}" for v in (r.d_o1_x, r.d_o2_x, r.avg_d)]
                + [
                    "" if v is None else f"{v:.10g}"
                    for v in (r.s_id1_o1, r.s_id2_o2, r.s_id1_o2, r.s_id2_o1)
                ]
            )


def read_score_table(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"score table not found: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SCORE_TABLE_HEADER:
            raise ManifestError(f"{path}: header must be {','.join(SCORE_TABLE_HEADER)}")
        for idx, raw in enumerate(reader, start=1):
            try:
                rows.append(
                    ScoreRow(
                        sample_id=raw["sample_id"],
                        label=raw["label"],
                        d_o1_x=float(raw["d_o1_x"]),
                        d_o2_x=float(raw["d_o2_x"]),
                        avg_d=float(raw["avg_d"]),
                        s_id1_o1=float(raw["s_id1_o1"]) if raw["s_id1_o1"] else None,
                        s_id2_o2=float(raw["s_id2_o2"]) if raw["s_id2_o2"] else None,
                        s_id1_o2=float(raw["s_id1_o2"]) if raw["s_id1_o2"] else None,
                        s_id2_o1=float(raw["s_id2_o1"]) if raw["s_id2_o1"] else None,
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}: malformed row {idx}: {exc}") from exc
    return rows


def dprime(sample_a, sample_b) -> float:
    """|mu_a - mu_b| / sqrt((var_a + var_b) / 2), unbiased sample variances."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise EvaluationError("d-prime needs at least 2 samples per distribution")
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    pooled = (var_a + var_b) / 2.0
    if pooled <= 0.0:
        raise EvaluationError("d-prime undefined: zero combined variance")
    return float(abs(a.mean() - b.mean()) / np.sqrt(pooled))


def tmr_at_fmr(genuine, impostor, fmr: float):
    """(TMR, threshold) on similarity scores (higher = more similar).

    The threshold is the smallest candidate value whose impostor
    pass-fraction is <= fmr; candidates are the impostor scores themselves
    plus a sentinel just above the maximum (FMR 0 there, so a threshold
    always exists).
    """
    g = np.asarray(genuine, dtype=np.float64)
    m = np.asarray(impostor, dtype=np.float64)
    if g.size == 0 or m.size == 0:
        raise EvaluationError("tmr_at_fmr needs non-empty score lists")
    if not 0.0 <= fmr <= 1.0:
        raise EvaluationError(f"fmr {fmr} outside [0,1]")
    candidates = np.unique(m)
    candidates = np.append(candidates, np.nextafter(candidates[-1], np.inf))
    # fraction of impostors at or above each candidate, candidates ascending
    counts = m.size - np.searchsorted(np.sort(m), candidates, side="left")
    passing = counts / m.size <= fmr
    threshold = float(candidates[np.argmax(passing)])
    tmr = float((g >= threshold).mean())
    return tmr, threshold


def assignment_scores(rows):
    """Genuine/impostor similarity pools per identity slot.

    For each sample with identity scores, the cross-road rule assigns one
    output to each identity; the assigned coupling's similarity is that
    slot's genuine score and the rejected coupling involving the same
    identity is its impostor score.
    """
    pools = {
        1: {"genuine": [], "impostor": []},
        2: {"genuine": [], "impostor": []},
        "decisions": [],
    }
    for r in rows:
        if not r.has_identity_scores:
            continue
        assignment = crossroad_pair_assignment(r.s_id1_o1, r.s_id2_o2, r.s_id1_o2, r.s_id2_o1)
        pools["decisions"].append(assignment.decision)
        if assignment.decision == DIRECT:
            pools[1]["genuine"].append(r.s_id1_o1)
            pools[1]["impostor"].append(r.s_id1_o2)
            pools[2]["genuine"].append(r.s_id2_o2)
            pools[2]["impostor"].append(r.s_id2_o1)
        else:
            pools[1]["genuine"].append(r.s_id1_o2)
            pools[1]["impostor"].append(r.s_id1_o1)
            pools[2]["genuine"].append(r.s_id2_o1)
            pools[2]["impostor"].append(r.s_id2_o2)
    return pools


def metrics_report(rows, fmr: float = 0.10) -> str:
    """Plain-text summary: counts, d-prime of avg distances, per-slot TMR@FMR."""
    morphed = [r.avg_d for r in rows if r.label == "morphed"]
    nonmorphed = [r.avg_d for r in rows if r.label == "non_morphed"]
    lines = [
        "de-morphing evaluation report",
        f"samples: {len(rows)} total, {len(morphed)} morphed, {len(nonmorphed)} non-morphed",
    ]
    if len(morphed) >= 2 and len(nonmorphed) >= 2:
        try:
            dp = dprime(morphed, nonmorphed)
            lines.append(f"d-prime (avg distance, morphed vs non-morphed): {dp:.4f}")
        except EvaluationError as exc:
            lines.append(f"d-prime: undefined ({exc})")
    else:
        lines.append("d-prime: not computed (need >=2 samples per label)")

    for label in ("morphed", "non_morphed"):
        subset = [r for r in rows if r.label == label]
        pools = assignment_scores(subset)
        if not pools["decisions"]:
            continue
        n_direct = pools["decisions"].count(DIRECT)
        lines.append(
            f"{label}: pair assignment direct={n_direct} swapped={len(pools['decisions']) - n_direct}"
        )
        for slot in (1, 2):
            genuine = pools[slot]["genuine"]
            impostor = pools[slot]["impostor"]
            if genuine and impostor:
                tmr, thr = tmr_at_fmr(genuine, impostor, fmr)
                lines.append(
                    f"{label}: subject {slot} TMR@FMR={fmr:g}: {100 * tmr:.1f}% (threshold {thr:.6g}, n={len(genuine)})"
                )
    return "\n".join(lines) + "\n"


def emit_histograms(rows, out_dir, ext: str = "png") -> list:
    """Write the distance-distribution plots; returns the created paths.

    One histogram per label with the d(O1,X), d(O2,X), and average series,
    plus an overlay of the two average-distance distributions annotated
    with their d-prime. Rendering is pinned (Agg backend, fixed dpi, no
    metadata) so reruns are byte-identical.
    """
    if not rows:
        raise EvaluationError("cannot plot an empty score table")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    series = {
        label: [r for r in rows if r.label == label] for label in ("morphed", "non_morphed")
    }
    save_kwargs = {"dpi": 100, "metadata": {"Software": None}}

    for label, subset in series.items():
        if not subset:
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        bins = np.linspace(0.0, max(0.01, max(max(r.d_o1_x, r.d_o2_x) for r in subset)), 30)
        ax.hist([r.d_o1_x for r in subset], bins=bins, alpha=0.5, label="d(O1, X)")
        ax.hist([r.d_o2_x for r in subset], bins=bins, alpha=0.5, label="d(O2, X)")
        ax.hist([r.avg_d for r in subset], bins=bins, alpha=0.5, label="avg")
        ax.set_xlabel("comparator distance")
        ax.set_ylabel("count")
        ax.set_title(f"{label}: output-to-input distances")
        ax.legend()
        path = out_dir / f"{label}_hist.{ext}"
        fig.savefig(path, **save_kwargs)
        plt.close(fig)
        created.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    hi = max(0.01, max(r.avg_d for r in rows))
    bins = np.linspace(0.0, hi, 30)
    title = "average output-to-input distance"
    for label, subset in series.items():
        if subset:
            ax.hist([r.avg_d for r in subset], bins=bins, alpha=0.6, label=label)
    if len(series["morphed"]) >= 2 and len(series["non_morphed"]) >= 2:
        try:
            dp = dprime([r.avg_d for r in series["morphed"]],
                        [r.avg_d for r in series["non_morphed"]])
            title += f" (d-prime {dp:.3f})"
        except EvaluationError:
            pass
    ax.set_title(title)
    ax.set_xlabel("average comparator distance")
    ax.set_ylabel("count")
    ax.legend()
    path = out_dir / f"avg_overlay.{ext}"
    fig.savefig(path, **save_kwargs)
    plt.close(fig)
    created.append(path)
    return created
