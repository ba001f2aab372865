"""Evaluation machinery: retrieval accuracy, ablations, rank statistics.

Covers four layers of evidence that the latent space works: frame-level
kNN accuracy, the jig / no-jig acquisition ablation, Top-K accuracy of
a similarity board against a random-choice baseline, and Spearman rank
correlation of per-trial rankings with a one-sample Student t-test.

The t distribution's tail is evaluated here via a continued-fraction
regularized incomplete beta so the whole chain is dependency-free;
scipy serves only as an independent oracle in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .checkpoint import Checkpoint
from .dataset import DatasetManifest, synthesize_dataset
from .index import LatentIndex, build_index, knn_classify
from .moco import TrainConfig, TrainHistory, train
from .nn import Encoder, EncoderConfig
from .roller import RollerConfig


class DegenerateInputError(ValueError):
    """Statistic undefined on this input (for example zero variance)."""


class TrialsFormatError(Exception):
    """Similarity-trial file is malformed; message names the line."""


# ---------------------------------------------------------------------------
# kNN accuracy and the jig ablation


def knn_accuracy(encoder: Encoder, train_frames, train_labels, test_frames,
                 test_labels, aug_cfg: AugmentConfig, k: int = 1) -> float:
    """Embed both sets, classify each test frame against the train index."""
    if not train_frames or not test_frames:
        raise ValueError("train and test sets must both be non-empty")
    if len(train_frames) != len(train_labels) or len(test_frames) != len(test_labels):
        raise ValueError("frames and labels must align")
    tr_emb = encoder.embed_frames(train_frames, aug_cfg)
    te_emb = encoder.embed_frames(test_frames, aug_cfg)
    idx = build_index(tr_emb, train_labels)
    hits = sum(1 for v, want in zip(te_emb, test_labels)
               if knn_classify(idx, v, k) == want)
    return hits / len(test_frames)


@dataclass
class RegimeResult:
    checkpoint: Checkpoint
    history: TrainHistory


@dataclass
class AblationResult:
    with_jig: RegimeResult
    without_jig: RegimeResult

    def table(self) -> dict:
        return {
            regime: {"max_top1": r.history.max_top1, "final_top1": r.history.final_top1}
            for regime, r in (("with_jig", self.with_jig),
                              ("without_jig", self.without_jig))
        }


def jig_ablation(manifest: DatasetManifest, aug_cfg: AugmentConfig,
                 enc_cfg: EncoderConfig, train_cfg: TrainConfig, *,
                 data_seed: int = 0, frames_per_sample: int = 150,
                 frame_size: int = 64,
                 progress=None) -> AblationResult:
    """Train once per acquisition regime, everything else held fixed.

    The manifest's samples are reused verbatim; only the per-session jig
    flag differs between the two runs, and both draw their acquisition
    noise from the same seed chain.
    """
    results = {}
    for regime, jig in (("with_jig", True), ("without_jig", False)):
        m = DatasetManifest(
            samples=manifest.samples,
            sessions=tuple(replace(s, jig=jig, frame_files=None)
                           for s in manifest.sessions),
        )
        frames = synthesize_dataset(m, seed=data_seed,
                                    frames_per_sample=frames_per_sample,
                                    frame_size=frame_size)
        cb = (lambda e, l, a, _r=regime: progress(_r, e, l, a)) if progress else None
        ckpt, history = train((m, frames), aug_cfg, enc_cfg, train_cfg, progress=cb)
        results[regime] = RegimeResult(checkpoint=ckpt, history=history)
    return AblationResult(with_jig=results["with_jig"],
                          without_jig=results["without_jig"])


# ---------------------------------------------------------------------------
# Similarity trials


@dataclass(frozen=True)
class SimilarityTrial:
    query_sample_id: str
    human_top5: tuple[str, ...]        # ordered, most similar first
    model_ranking: tuple[str, ...]     # full board, ascending model distance

    def __post_init__(self):
        object.__setattr__(self, "human_top5", tuple(self.human_top5))
        object.__setattr__(self, "model_ranking", tuple(self.model_ranking))
        if len(self.human_top5) != 5 or len(set(self.human_top5)) != 5:
            raise ValueError("human_top5 must be 5 distinct ids")
        if len(set(self.model_ranking)) != len(self.model_ranking):
            raise ValueError("model_ranking must be distinct")
        if len(self.model_ranking) < 5:
            raise ValueError("model_ranking must cover at least 5 ids")
        missing = set(self.human_top5) - set(self.model_ranking)
        if missing:
            raise ValueError(f"human picks absent from the board: {sorted(missing)}")

    def to_dict(self) -> dict:
        return {
            "query_sample_id": self.query_sample_id,
            "human_top5": list(self.human_top5),
            "model_ranking": list(self.model_ranking),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimilarityTrial":
        return cls(query_sample_id=d["query_sample_id"],
                   human_top5=tuple(d["human_top5"]),
                   model_ranking=tuple(d["model_ranking"]))


def topk_accuracy(trials, k: int) -> float:
    """Fraction of trials whose human favourite is in the model's first K."""
    trials = list(trials)
    if not trials:
        raise ValueError("no trials")
    board = min(len(t.model_ranking) for t in trials)
    if not 1 <= k <= board:
        raise ValueError(f"K must be in [1, {board}], got {k}")
    hits = sum(1 for t in trials if t.human_top5[0] in t.model_ranking[:k])
    return hits / len(trials)


def random_baseline(k: int, board_size: int = 16) -> float:
    """Chance that a uniformly random ranking puts the answer in the top K."""
    if not 1 <= k <= board_size:
        raise ValueError(f"K must be in [1, {board_size}], got {k}")
    return k / board_size


def spearman_rho(trial: SimilarityTrial) -> float:
    """Rank correlation of the human order against the model order.

    Both rankings are restricted to the human's five picks: human ranks
    are 1..5 by choice order, model ranks re-rank those same items by
    their positions in the full board.  Distinctness is guaranteed by
    trial validation, so the no-ties formula applies.
    """
    positions = [trial.model_ranking.index(s) for s in trial.human_top5]
    n = len(positions)
    model_rank = [1 + sum(1 for q in positions if q < p) for p in positions]
    d2 = sum((h - m) ** 2 for h, m in zip(range(1, n + 1), model_rank))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


# ---------------------------------------------------------------------------
# Student t-test, self-contained


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction of the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-12:
            return h
    raise RuntimeError("incomplete-beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
             + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: int) -> float:
    """P(T > t) for Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if t >= 0:
        return 0.5 * betainc_reg(df / 2.0, 0.5, df / (df + t * t))
    return 1.0 - student_t_sf(-t, df)


def t_test_vs_zero(rhos, *, two_sided: bool = True) -> tuple[float, float]:
    """One-sample t-test of mean(rhos) against zero.

    Returns (t, p); two-sided by default, one-sided tests the positive
    direction.  Zero sample variance is rejected rather than reported as
    an infinite statistic.
    """
    x = np.asarray(list(rhos), dtype=np.float64)
    n = x.size
    if n < 2:
        raise ValueError(f"need at least 2 observations, got {n}")
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        raise DegenerateInputError("zero sample variance: t statistic undefined")
    t = float(x.mean()) / (sd / math.sqrt(n))
    p = 2.0 * student_t_sf(abs(t), n - 1) if two_sided else student_t_sf(t, n - 1)
    return t, min(p, 1.0)


# ---------------------------------------------------------------------------
# Synthetic trials (stand-in for the human study)


def generate_synthetic_trials(index: LatentIndex, roller_cfg: RollerConfig,
                              noise_level: float, n_trials: int,
                              seed: int = 0) -> list[SimilarityTrial]:
    """Simulated assessors: noisy re-rankings of true latent distances.

    Each trial queries one roller sample; the "human" answer perturbs
    every board distance with Gaussian noise of the given level before
    taking the closest five.  noise 0 reproduces the model ranking;
    noise math.inf shuffles uniformly.
    """
    missing = [s for s in roller_cfg.slot_samples if s not in index.centroids]
    if missing:
        raise ValueError(f"roller samples missing from the index: {missing}")
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    board = list(roller_cfg.slot_samples)
    trials = []
    for _ in range(n_trials):
        query = board[int(rng.integers(len(board)))]
        qc = index.centroids[query].astype(np.float64)
        dist = {s: float(np.linalg.norm(index.centroids[s].astype(np.float64) - qc))
                for s in board}
        ranking = sorted(board, key=lambda s: (dist[s], s))
        if math.isinf(noise_level):
            shuffled = [board[i] for i in rng.permutation(len(board))]
            top5 = shuffled[:5]
        else:
            noisy = {s: dist[s] + noise_level * rng.standard_normal() for s in board}
            top5 = sorted(board, key=lambda s: (noisy[s], s))[:5]
        trials.append(SimilarityTrial(query_sample_id=query,
                                      human_top5=tuple(top5),
                                      model_ranking=tuple(ranking)))
    return trials


def save_trials(trials, path) -> None:
    """One JSON object per line; key order fixed for stable diffs."""
    lines = [json.dumps(t.to_dict(), sort_keys=True) for t in trials]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_trials(path) -> list[SimilarityTrial]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(SimilarityTrial.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise TrialsFormatError(f"{path}:{lineno}: bad trial record: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    max_top1: float
    final_top1: float
    topk_curve: dict                    # K -> fraction, K = 1..board
    spearman_rhos: list
    t_statistic: float
    p_value: float
    board_size: int = 16

    def __post_init__(self):
        for name in ("max_top1", "final_top1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a fraction, got {v}")
        ks = sorted(self.topk_curve)
        vals = [self.topk_curve[k] for k in ks]
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError("topk_curve values must be fractions")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("topk_curve must be non-decreasing in K")

    def to_json(self) -> str:
        return json.dumps({
            "max_top1": self.max_top1,
            "final_top1": self.final_top1,
            "topk_curve": {str(k): v for k, v in sorted(self.topk_curve.items())},
            "spearman_rhos": list(self.spearman_rhos),
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "board_size": self.board_size,
        }, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        d = json.loads(text)
        return cls(max_top1=d["max_top1"], final_top1=d["final_top1"],
                   topk_curve={int(k): v for k, v in d["topk_curve"].items()},
                   spearman_rhos=list(d["spearman_rhos"]),
                   t_statistic=d["t_statistic"], p_value=d["p_value"],
                   board_size=d.get("board_size", 16))

    def to_table(self) -> str:
        lines = [
            f"{'Max@top1':<12} {self.max_top1:.4f}",
            f"{'Final@top1':<12} {self.final_top1:.4f}",
            "Top-K accuracy vs random baseline:",
        ]
        for k in sorted(self.topk_curve):
            lines.append(f"  K={k:<3d} model {self.topk_curve[k]:.4f}   "
                         f"random {random_baseline(k, self.board_size):.4f}")
        lines.append(f"Spearman rho over {len(self.spearman_rhos)} trials: "
                     f"mean {np.mean(self.spearman_rhos):.4f}")
        lines.append(f"t = {self.t_statistic:.4f}, p = {self.p_value:.6f}")
        return "\n".join(lines)


def make_report(max_top1: float, final_top1: float, trials, *,
                two_sided: bool = True) -> EvalReport:
    trials = list(trials)
    if not trials:
        raise ValueError("no trials")
    board = min(len(t.model_ranking) for t in trials)
    curve = {k: topk_accuracy(trials, k) for k in range(1, board + 1)}
    rhos = [spearman_rho(t) for t in trials]
    t_stat, p = t_test_vs_zero(rhos, two_sided=two_sided)
    return EvalReport(max_top1=max_top1, final_top1=final_top1, topk_curve=curve,
                      spearman_rhos=rhos, t_statistic=t_stat, p_value=p,
                      board_size=board)


def svg_topk_curve(report: EvalReport, path, *, width: int = 520,
                   height: int = 360, margin: int = 48) -> Path:
    """Model Top-K accuracy against the K/board random baseline, as SVG."""
    path = Path(path)
    ks = sorted(report.topk_curve)
    inner_w = width - 2 * margin
    inner_h = height - 2 * margin

    def pt(k, v):
        x = margin + (k - ks[0]) / max(ks[-1] - ks[0], 1) * inner_w
        y = height - margin - v * inner_h
        return f"{x:.1f},{y:.1f}"

    model_pts = " ".join(pt(k, report.topk_curve[k]) for k in ks)
    base_pts = " ".join(pt(k, random_baseline(k, report.board_size)) for k in ks)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<polyline points="{model_pts}" fill="none" stroke="#2a6f97" stroke-width="2"/>',
        f'<polyline points="{base_pts}" fill="none" stroke="#888" stroke-width="1.5" '
        f'stroke-dasharray="5,4"/>',
        f'<text x="{width // 2}" y="{height - 10}" font-size="12" '
        f'font-family="sans-serif" text-anchor="middle">K</text>',
        f'<text x="14" y="{height // 2}" font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 14 {height // 2})" text-anchor="middle">accuracy</text>',
    ]
    for k in ks:
        x, y = pt(k, report.topk_curve[k]).split(",")
        parts.append(f'<circle cx="{x}" cy="{y}" r="3" fill="#2a6f97"/>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))
    return path
