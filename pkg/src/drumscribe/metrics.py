"""Onset F-measure with a 50 ms tolerance window, per-hit and pooled.

Matching within each class is a maximum-cardinality one-to-one matching
between reference and estimate events whose onset times differ by at most
the tolerance (greedy matching can undercount at 50 ms event densities, so
a Hopcroft-Karp matcher does the work). The velocity-aware variant keeps
only matched pairs that also agree in velocity after a single global
least-squares rescaling of the estimates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .events import DrumTrack

DEFAULT_TOLERANCE = 0.050
DEFAULT_VELOCITY_TOLERANCE = 0.1


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f_measure(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class EvalResult:
    per_class: dict[int, ClassCounts]
    matched_pairs: dict[int, list[tuple[int, int]]] = field(default_factory=dict)

    @property
    def overall(self) -> ClassCounts:
        return ClassCounts(
            tp=sum(c.tp for c in self.per_class.values()),
            fp=sum(c.fp for c in self.per_class.values()),
            fn=sum(c.fn for c in self.per_class.values()),
        )

    @property
    def macro_f(self) -> float:
        if not self.per_class:
            return 0.0
        return float(np.mean([c.f_measure for c in self.per_class.values()]))

    def rows(self) -> list[tuple]:
        out = []
        for cls in sorted(self.per_class):
            c = self.per_class[cls]
            out.append((cls, c.tp, c.fp, c.fn, c.precision, c.recall, c.f_measure))
        return out


def _match_times(ref_times: np.ndarray, est_times: np.ndarray, tol: float) -> list[tuple[int, int]]:
    """Maximum one-to-one matching between onset lists within tolerance."""
    if len(ref_times) == 0 or len(est_times) == 0:
        return []
    window = np.abs(ref_times[:, None] - est_times[None, :]) <= tol
    if not window.any():
        return []
    graph = csr_matrix(window)
    match = maximum_bipartite_matching(graph, perm_type="column")
    return [(i, int(j)) for i, j in enumerate(match) if j >= 0]


def _classes_of(track: DrumTrack) -> dict[int, np.ndarray]:
    by_class: dict[int, list[float]] = {}
    for e in track.events:
        by_class.setdefault(e.hit, []).append(e.time)
    return {cls: np.asarray(times) for cls, times in by_class.items()}


def match_onsets(ref: DrumTrack, est: DrumTrack, tol: float = DEFAULT_TOLERANCE) -> EvalResult:
    ref_by = _classes_of(ref)
    est_by = _classes_of(est)
    per_class: dict[int, ClassCounts] = {}
    matched: dict[int, list[tuple[int, int]]] = {}
    for cls in sorted(set(ref_by) | set(est_by)):
        r = ref_by.get(cls, np.empty(0))
        e = est_by.get(cls, np.empty(0))
        pairs = _match_times(r, e, tol)
        per_class[cls] = ClassCounts(tp=len(pairs), fp=len(e) - len(pairs), fn=len(r) - len(pairs))
        matched[cls] = pairs
    return EvalResult(per_class=per_class, matched_pairs=matched)


def f_measure(ref: DrumTrack, est: DrumTrack, tol: float = DEFAULT_TOLERANCE) -> EvalResult:
    """Per-class precision/recall/F and the pooled (micro-average) counts."""
    return match_onsets(ref, est, tol)


def velocity_f_measure(
    ref: DrumTrack,
    est: DrumTrack,
    tol: float = DEFAULT_TOLERANCE,
    vel_tol: float = DEFAULT_VELOCITY_TOLERANCE,
) -> EvalResult:
    """Onset matching that additionally requires velocity agreement.

    Reference velocities are scaled to [0, 1] by the maximum reference
    velocity; estimate velocities get one global scale fitted by least
    squares over the time-matched pairs. A matched pair survives only if
    |v_ref - s * v_est| <= vel_tol. Scale fitting makes the score invariant
    to any uniform rescaling of the estimated velocities.
    """
    base = match_onsets(ref, est, tol)
    ref_events = ref.events
    est_events = est.events
    ref_by_class: dict[int, list[int]] = {}
    est_by_class: dict[int, list[int]] = {}
    for idx, e in enumerate(ref_events):
        ref_by_class.setdefault(e.hit, []).append(idx)
    for idx, e in enumerate(est_events):
        est_by_class.setdefault(e.hit, []).append(idx)

    ref_max = max((e.velocity for e in ref_events), default=0)
    matched: list[tuple[int, int, int, float, float]] = []  # (class, ri, ei, v_ref, v_est)
    for cls, pairs in base.matched_pairs.items():
        for ri, ei in pairs:
            v_ref = ref_events[ref_by_class[cls][ri]].velocity / ref_max if ref_max else 0.0
            v_est = float(est_events[est_by_class[cls][ei]].velocity)
            matched.append((cls, ri, ei, v_ref, v_est))

    if not matched:
        # No time-matched pairs at all: velocity F is 0 by convention.
        per_class = {
            cls: ClassCounts(tp=0, fp=c.tp + c.fp, fn=c.tp + c.fn)
            for cls, c in base.per_class.items()
        }
        return EvalResult(per_class=per_class, matched_pairs={cls: [] for cls in base.per_class})

    v_ref_arr = np.array([m[3] for m in matched])
    v_est_arr = np.array([m[4] for m in matched])
    denom = float(np.dot(v_est_arr, v_est_arr))
    scale = float(np.dot(v_ref_arr, v_est_arr)) / denom if denom > 0 else 1.0

    kept_pairs: dict[int, list[tuple[int, int]]] = {cls: [] for cls in base.per_class}
    for cls, ri, ei, v_ref, v_est in matched:
        if abs(v_ref - scale * v_est) <= vel_tol:
            kept_pairs[cls].append((ri, ei))
    per_class = {}
    for cls, c in base.per_class.items():
        tp = len(kept_pairs[cls])
        per_class[cls] = ClassCounts(tp=tp, fp=(c.tp + c.fp) - tp, fn=(c.tp + c.fn) - tp)
    return EvalResult(per_class=per_class, matched_pairs=kept_pairs)


def format_report(result: EvalResult, class_names: dict[int, str] | None = None) -> str:
    lines = [f"{'class':>10} {'TP':>6} {'FP':>6} {'FN':>6} {'P':>7} {'R':>7} {'F':>7}"]
    for cls, tp, fp, fn, p, r, f in result.rows():
        name = class_names.get(cls, str(cls)) if class_names else str(cls)
        lines.append(f"{name:>10} {tp:>6} {fp:>6} {fn:>6} {p:>7.4f} {r:>7.4f} {f:>7.4f}")
    o = result.overall
    lines.append(
        f"{'overall':>10} {o.tp:>6} {o.fp:>6} {o.fn:>6} {o.precision:>7.4f} {o.recall:>7.4f} {o.f_measure:>7.4f}"
    )
    lines.append(f"macro-average F: {result.macro_f:.4f}")
    return "\n".join(lines)
