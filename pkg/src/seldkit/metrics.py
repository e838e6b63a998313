"""Location-dependent detection and class-dependent localization metrics.

Evaluation is frame-wise at label resolution (100 ms). In every frame and
class, references and predictions are paired by a minimum-total-angle
assignment; a pair within the spatial threshold is a true positive, a pair
beyond it counts as one false positive and one false negative, and
leftovers are false positives (predictions) or false negatives (references).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .labels import Event, EventLabelSet, angular_distance


class EvaluationError(ValueError):
    pass


@dataclass
class FrameMatch:
    pairs: list[tuple[int, int, float]]  # (ref index, pred index, angle in degrees)
    unmatched_refs: list[int]
    unmatched_preds: list[int]


def distance_matrix(refs: list[Event], preds: list[Event]) -> np.ndarray:
    if not refs or not preds:
        return np.zeros((len(refs), len(preds)))
    ra = np.array([[e.azimuth, e.elevation] for e in refs])
    pa = np.array([[e.azimuth, e.elevation] for e in preds])
    return angular_distance(ra[:, None, 0], ra[:, None, 1], pa[None, :, 0], pa[None, :, 1])


def match_frame(refs: list[Event], preds: list[Event]) -> FrameMatch:
    """Pair same-class references and predictions minimising the summed great-circle angle."""
    cost = distance_matrix(refs, preds)
    rows, cols = linear_sum_assignment(cost) if cost.size else ([], [])
    pairs = [(int(r), int(c), float(cost[r, c])) for r, c in zip(rows, cols)]
    used_r = {p[0] for p in pairs}
    used_c = {p[1] for p in pairs}
    return FrameMatch(
        pairs,
        [i for i in range(len(refs)) if i not in used_r],
        [j for j in range(len(preds)) if j not in used_c],
    )


def seld_score(er: float, f1: float, le: float, lr: float) -> float:
    """mean(ER, 1 - F1, LE / 180, 1 - LR) with LE in degrees."""
    if not 0.0 <= le <= 180.0:
        raise EvaluationError(f"localization error must be within [0, 180] degrees, got {le}")
    return (er + (1.0 - f1) + le / 180.0 + (1.0 - lr)) / 4.0


@dataclass
class ClassStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    refs: int = 0
    matched: int = 0
    angle_sum: float = 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    @property
    def le(self) -> float:
        return self.angle_sum / self.matched if self.matched else 180.0

    @property
    def lr(self) -> float:
        return self.matched / self.refs if self.refs else 0.0


@dataclass
class MetricsReport:
    ER: float
    F1: float
    LE: float
    LR: float
    SELD: float
    averaging: str = "macro"
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {"ER": self.ER, "F1": self.F1, "LE": self.LE, "LR": self.LR, "SELD": self.SELD}

    def table(self) -> str:
        """Fixed-order text table followed by a ``key=value`` block."""
        lines = [
            f"{'ER':>8}{'F1':>8}{'LE':>8}{'LR':>8}{'SELD':>8}",
            f"{self.ER:8.3f}{self.F1:8.3f}{self.LE:8.2f}{self.LR:8.3f}{self.SELD:8.3f}",
            "",
            f"averaging={self.averaging}",
        ]
        lines += [f"{k}={v:.6f}" for k, v in self.as_dict().items()]
        return "\n".join(lines)


def evaluate(
    refs: EventLabelSet,
    preds: EventLabelSet,
    threshold: float = 20.0,
    averaging: str = "macro",
) -> MetricsReport:
    if averaging not in ("macro", "micro"):
        raise ValueError(f"averaging must be 'macro' or 'micro', got {averaging!r}")
    if refs.num_events() == 0:
        raise EvaluationError("reference set has no events; error rate is undefined")
    n_classes = max(refs.num_classes, preds.num_classes)
    n_frames = max(refs.n_frames, preds.n_frames)
    stats = [ClassStats() for _ in range(n_classes)]
    errors = 0
    total_refs = 0
    for t in range(n_frames):
        ref_frame = refs.frames[t] if t < refs.n_frames else []
        pred_frame = preds.frames[t] if t < preds.n_frames else []
        fn_f = fp_f = 0
        for c in range(n_classes):
            r = [e for e in ref_frame if e.class_id == c]
            p = [e for e in pred_frame if e.class_id == c]
            if not r and not p:
                continue
            m = match_frame(r, p)
            st = stats[c]
            st.refs += len(r)
            st.matched += len(m.pairs)
            st.angle_sum += sum(a for _, _, a in m.pairs)
            tp = sum(1 for _, _, a in m.pairs if a <= threshold)
            far = len(m.pairs) - tp
            fp = far + len(m.unmatched_preds)
            fn = far + len(m.unmatched_refs)
            st.tp += tp
            st.fp += fp
            st.fn += fn
            fp_f += fp
            fn_f += fn
        total_refs += len(ref_frame)
        s = min(fn_f, fp_f)
        errors += s + max(0, fn_f - fp_f) + max(0, fp_f - fn_f)
    er = errors / total_refs
    active = [c for c in range(n_classes) if stats[c].refs > 0]
    per_class = {c: {"F1": stats[c].f1, "LE": stats[c].le, "LR": stats[c].lr} for c in active}
    if averaging == "macro":
        f1 = float(np.mean([stats[c].f1 for c in active]))
        le = float(np.mean([stats[c].le for c in active]))
        lr = float(np.mean([stats[c].lr for c in active]))
    else:
        pooled = ClassStats(
            tp=sum(s.tp for s in stats), fp=sum(s.fp for s in stats), fn=sum(s.fn for s in stats),
            refs=sum(s.refs for s in stats), matched=sum(s.matched for s in stats),
            angle_sum=sum(s.angle_sum for s in stats),
        )
        f1, le, lr = pooled.f1, pooled.le, pooled.lr
    return MetricsReport(er, f1, le, lr, seld_score(er, f1, le, lr), averaging, per_class)


# Published development-set results: (visual encoder, fusion, ER, F1 %, LE deg, LR %, SELD).
PUBLISHED_RESULTS = (
    ("I3D", "CMAF", 0.57, 40.5, 33.2, 55.3, 0.45),
    ("I3D", "Conf", 0.52, 46.4, 16.9, 60.2, 0.39),
    ("RC", "CMAF", 0.54, 41.3, 31.6, 53.4, 0.44),
    ("RC", "Conf", 0.51, 49.5, 15.8, 60.2, 0.38),
    ("RC", "CA", 0.55, 34.7, 30.4, 47.8, 0.47),
    ("RC", "GRU", 0.50, 49.4, 16.2, 56.8, 0.38),
    ("Both", "Conf", 0.52, 48.0, 16.2, 60.8, 0.38),
    ("Visual-only", "", 1.03, 0.9, 103.0, 11.4, 0.87),
    ("Audio-only", "", 0.51, 50.2, 15.4, 56.4, 0.38),
    ("Baseline AO", "", 0.57, 29.9, 22.0, 47.7, 0.48),
    ("Baseline AV", "", 1.07, 14.3, 48.0, 35.5, 0.71),
)
