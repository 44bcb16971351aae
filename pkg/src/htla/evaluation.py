"""Micro/Macro-F1, analysis breakdowns, and the paired one-sided t-test.

Breakdowns mirror the three analysis axes: label prevalence buckets
(P1..P5), hierarchy levels, and per-sample label-path counts. The Student-t
tail is evaluated natively through the regularized incomplete beta
function, so no statistics dependency is needed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .hierarchy import LabelTaxonomy, label_level


@dataclass
class LabelCounts:
    tp: int
    fp: int
    fn: int
    f1: float


@dataclass
class MetricsReport:
    micro_f1: float
    macro_f1: float
    per_label: list[LabelCounts]
    prevalence: dict[str, float] = field(default_factory=dict)
    levels: dict[int, dict[str, float]] = field(default_factory=dict)
    paths: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "per_label": [[c.tp, c.fp, c.fn, c.f1] for c in self.per_label],
            "prevalence": self.prevalence,
            "levels": {str(k): v for k, v in self.levels.items()},
            "paths": self.paths,
        }


def _f1(tp: int, fp: int, fn: int) -> float:
    # 0/0 convention: an absent, never-predicted label scores 0
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def f1_scores(Y: np.ndarray, Yhat: np.ndarray) -> MetricsReport:
    """Per-label confusion counts, Micro-F1 over summed counts, Macro-F1
    as the unweighted mean of per-label F1."""
    Y = np.asarray(Y)
    Yhat = np.asarray(Yhat)
    if Y.shape != Yhat.shape:
        raise ValueError(f"shape mismatch: gold {Y.shape} vs predicted {Yhat.shape}")
    gold = Y > 0
    pred = Yhat > 0
    tp = (gold & pred).sum(axis=0)
    fp = (~gold & pred).sum(axis=0)
    fn = (gold & ~pred).sum(axis=0)
    per_label = [LabelCounts(int(t), int(p), int(n), _f1(t, p, n)) for t, p, n in zip(tp, fp, fn)]
    micro = _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    macro = float(np.mean([c.f1 for c in per_label])) if per_label else 0.0
    return MetricsReport(micro_f1=micro, macro_f1=macro, per_label=per_label)


def _macro_over(Y: np.ndarray, Yhat: np.ndarray, cols) -> float:
    return f1_scores(Y[:, cols], Yhat[:, cols]).macro_f1


def prevalence_buckets(freq: np.ndarray, Y: np.ndarray, Yhat: np.ndarray) -> dict[str, float]:
    """Macro-F1 of five label groups ordered by descending training
    frequency (ties toward the lower id; remainder to the earlier,
    more prevalent groups)."""
    K = len(freq)
    if K < 5:
        raise ValueError(f"need at least 5 labels for prevalence buckets, got {K}")
    order = np.lexsort((np.arange(K), -np.asarray(freq)))
    base, rem = divmod(K, 5)
    sizes = [base + (1 if g < rem else 0) for g in range(5)]
    out = {}
    start = 0
    for g, size in enumerate(sizes, start=1):
        cols = order[start : start + size]
        out[f"P{g}"] = _macro_over(Y, Yhat, cols)
        start += size
    return out


def level_breakdown(tax: LabelTaxonomy, Y: np.ndarray, Yhat: np.ndarray) -> dict[int, dict[str, float]]:
    """Micro/Macro-F1 restricted to the labels at each hierarchy level."""
    levels: dict[int, list[int]] = {}
    for i in range(tax.num_labels):
        levels.setdefault(label_level(tax, i), []).append(i)
    out = {}
    for lvl in sorted(levels):
        cols = levels[lvl]
        rep = f1_scores(Y[:, cols], Yhat[:, cols])
        out[lvl] = {"micro_f1": rep.micro_f1, "macro_f1": rep.macro_f1}
    return out


def path_count(tax: LabelTaxonomy, labels: set[int] | list[int]) -> int:
    """Number of maximal labels (no child also present) in a label set."""
    labels = set(labels)
    if not labels:
        raise ValueError("empty label set")
    for lid in labels:
        par = tax.parent[lid]
        if par != tax.virtual_root and par not in labels:
            warnings.warn(f"label set is not ancestor-closed (label {lid} lacks its parent)")
            break
    return sum(1 for lid in labels if not any(c in labels for c in tax.children.get(lid, [])))


def path_breakdown(
    tax: LabelTaxonomy,
    Y: np.ndarray,
    Yhat: np.ndarray,
    min_group: int = 5,
) -> dict[str, float]:
    """Macro-F1 of sample groups keyed by gold path count.

    Groups smaller than ``min_group`` merge into the nearest larger count
    (falling back to the nearest smaller when none exists); keys report the
    merged range.
    """
    counts = np.array(
        [path_count(tax, list(np.flatnonzero(Y[i] > 0))) for i in range(Y.shape[0])]
    )
    uniq = sorted(set(counts.tolist()))
    groups: list[list[int]] = [[c] for c in uniq]
    # merge small groups into the neighbor with the larger count
    changed = True
    while changed and len(groups) > 1:
        changed = False
        for gi, grp in enumerate(groups):
            size = int(np.isin(counts, grp).sum())
            if size < min_group:
                target = gi + 1 if gi + 1 < len(groups) else gi - 1
                groups[target] = sorted(groups[target] + grp)
                del groups[gi]
                changed = True
                break
    out = {}
    for grp in groups:
        rows = np.flatnonzero(np.isin(counts, grp))
        key = str(grp[0]) if len(grp) == 1 else f"{grp[0]}-{grp[-1]}"
        out[key] = f1_scores(Y[rows], Yhat[rows]).macro_f1
    return out


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
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
        if abs(delta - 1.0) < 1e-14:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T > t) of Student's t with ``df`` d.o.f."""
    x = df / (df + t * t)
    half = 0.5 * regularized_incomplete_beta(x, df / 2.0, 0.5)
    return half if t >= 0 else 1.0 - half


def paired_one_sided_ttest(scores_a, scores_b) -> float:
    """p-value for H1: mean(a - b) > 0, pairing runs by index.

    Zero-variance differences degenerate to p=0 for a positive mean and
    p=1 otherwise.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired score lists must have equal length")
    n = a.size
    if n < 2:
        raise ValueError("need at least 2 paired runs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 0.0 if mean > 0 else 1.0
    t = mean / (sd / math.sqrt(n))
    return student_t_sf(t, n - 1)
