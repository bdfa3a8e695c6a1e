"""Impact-error metrics, error-vs-horizon curves, and significance tests.

Predictors are compared window by window: each training window yields a
predicted impact point from its history, an impact error (IE, Euclidean
distance to the ground truth) and the window's true steps-to-impact K.
Errors bucketed by K form the early-stage accuracy curve; unpaired
two-sided Mann-Whitney U tests compare methods (exact enumeration for
tiny samples, tie-corrected normal approximation otherwise).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PredictionError
from .trajkit import TrainingWindow


def impact_error(pred: np.ndarray, gt: np.ndarray) -> float:
    """Euclidean distance between predicted and true impact points."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("impact points must be finite")
    return float(np.linalg.norm(pred - gt))


@dataclass
class MethodErrors:
    """Raw per-window evaluation of one method on one partition."""

    method: str
    partition: str
    k_values: np.ndarray  # (n,) ground-truth steps to impact
    errors: np.ndarray    # (n,) impact errors, meters
    n_failed: int = 0

    def pooled(self, min_k: int = 0) -> np.ndarray:
        return self.errors[self.k_values >= min_k]


@dataclass
class IeCurve:
    """Bucketed IE statistics: steps-to-impact bucket -> (mean, std, n)."""

    method: str
    partition: str
    buckets: dict[int, tuple[float, float, int]]
    n_failed: int = 0


def evaluate_method(name: str, predict, windows: list[TrainingWindow],
                    partition: str) -> MethodErrors:
    """Run one predictor over windows; failures are tallied and excluded.

    ``predict`` maps (history_times, history_states) to a 3-vector.
    """
    ks, errs, failed = [], [], 0
    for w in windows:
        try:
            point = predict(w.history_times, w.history)
        except PredictionError:
            failed += 1
            continue
        ks.append(w.k_steps)
        errs.append(impact_error(point, w.impact_point))
    return MethodErrors(method=name, partition=partition,
                        k_values=np.asarray(ks, dtype=int),
                        errors=np.asarray(errs, dtype=float), n_failed=failed)


def curve_from_errors(me: MethodErrors, bucket_width: int = 10) -> IeCurve:
    """Group raw errors into steps-to-impact buckets (bucket key is the
    lower edge)."""
    buckets: dict[int, tuple[float, float, int]] = {}
    if me.k_values.size:
        keys = (me.k_values // bucket_width) * bucket_width
        for key in sorted(set(int(k) for k in keys)):
            sel = me.errors[keys == key]
            buckets[key] = (float(sel.mean()), float(sel.std()), int(sel.size))
    return IeCurve(method=me.method, partition=me.partition,
                   buckets=buckets, n_failed=me.n_failed)


def ie_curve(predictors: dict[str, object], windows: list[TrainingWindow],
             partition: str, bucket_width: int = 10,
             ) -> tuple[list[IeCurve], list[MethodErrors]]:
    """Evaluate every predictor on the windows and bucket the errors."""
    raws = [evaluate_method(name, fn, windows, partition)
            for name, fn in predictors.items()]
    return [curve_from_errors(r, bucket_width) for r in raws], raws


# ---------------------------------------------------------------------------
# Mann-Whitney U


@dataclass(frozen=True)
class SignificanceResult:
    p_value: float
    exact: bool
    degenerate: bool = False


#: Sample-size bound below which the exact permutation distribution is used.
EXACT_LIMIT = 8


def _u_statistic(a: np.ndarray, b: np.ndarray) -> float:
    gt = (a[:, None] > b[None, :]).sum()
    eq = (a[:, None] == b[None, :]).sum()
    return float(gt) + 0.5 * float(eq)


def significance(samples_a, samples_b) -> SignificanceResult:
    """Two-sided Mann-Whitney U test.

    Exact enumeration over all labelings when both samples have at most
    EXACT_LIMIT values; otherwise the normal approximation with tie
    correction and continuity correction.  All-equal inputs are flagged
    and give p = 1.
    """
    a = np.asarray(samples_a, dtype=float)
    b = np.asarray(samples_b, dtype=float)
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be non-empty")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return SignificanceResult(p_value=1.0, exact=True, degenerate=True)

    mu = 0.5 * n1 * n2
    if n1 <= EXACT_LIMIT and n2 <= EXACT_LIMIT:
        observed = abs(_u_statistic(a, b) - mu)
        total = 0
        extreme = 0
        idx = range(n1 + n2)
        for picks in itertools.combinations(idx, n1):
            mask = np.zeros(n1 + n2, dtype=bool)
            mask[list(picks)] = True
            u = _u_statistic(pooled[mask], pooled[~mask])
            total += 1
            if abs(u - mu) >= observed - 1e-12:
                extreme += 1
        return SignificanceResult(p_value=extreme / total, exact=True)

    # Normal approximation with tie correction.
    ranked = _rank_with_ties(pooled)
    u1 = n1 * n2 + n1 * (n1 + 1) / 2.0 - float(ranked[:n1].sum())
    big_u = max(u1, n1 * n2 - u1)
    tie = _tie_correction(pooled)
    sd = math.sqrt(tie * n1 * n2 * (n1 + n2 + 1) / 12.0)
    if sd == 0.0:
        return SignificanceResult(p_value=1.0, exact=False, degenerate=True)
    z = max(0.0, big_u - mu - 0.5) / sd
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return SignificanceResult(p_value=p, exact=False)


def _rank_with_ties(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=float)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _tie_correction(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return 1.0
    _, counts = np.unique(values, return_counts=True)
    return 1.0 - float(np.sum(counts ** 3 - counts)) / float(n ** 3 - n)


def significance_rows(raws: list[MethodErrors], pairs: list[tuple[str, str]],
                      bucket_width: int = 10) -> list[tuple]:
    """Per-bucket Mann-Whitney rows for the significance CSV."""
    by_key = {(r.method, r.partition): r for r in raws}
    rows = []
    partitions = sorted({r.partition for r in raws})
    for (name_a, name_b) in pairs:
        for part in partitions:
            ra = by_key.get((name_a, part))
            rb = by_key.get((name_b, part))
            if ra is None or rb is None:
                continue
            keys_a = (ra.k_values // bucket_width) * bucket_width
            keys_b = (rb.k_values // bucket_width) * bucket_width
            for key in sorted(set(keys_a.tolist()) & set(keys_b.tolist())):
                res = significance(ra.errors[keys_a == key], rb.errors[keys_b == key])
                rows.append((name_a, name_b, part, int(key), res.p_value))
    return rows


# ---------------------------------------------------------------------------
# report emission


def write_ie_curves_csv(curves: list[IeCurve], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "partition", "steps_to_impact", "n",
                         "ie_mean_m", "ie_std_m"])
        for curve in curves:
            for key in sorted(curve.buckets):
                mean, std, n = curve.buckets[key]
                writer.writerow([curve.method, curve.partition, key, n,
                                 repr(mean), repr(std)])


def write_significance_csv(rows: list[tuple], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method_a", "method_b", "partition", "steps_to_impact",
                         "p_value"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2], row[3], repr(row[4])])


def emit_report(out_dir, curves: list[IeCurve] | None = None,
                significance_data: list[tuple] | None = None,
                sr_rows: list[tuple] | None = None,
                pds_report=None,
                checks: list[tuple[str, bool]] | None = None) -> list[Path]:
    """Write every available artifact CSV plus a pass/fail summary.

    Returns the list of written paths.  Output is deterministic for
    identical inputs.
    """
    from .analysis import write_report_csv
    from .catchsim import write_sr_csv

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if curves is not None:
        path = out / "ie_curves.csv"
        write_ie_curves_csv(curves, path)
        written.append(path)
    if significance_data is not None:
        path = out / "significance.csv"
        write_significance_csv(significance_data, path)
        written.append(path)
    if sr_rows is not None:
        path = out / "sr_table.csv"
        write_sr_csv(sr_rows, path)
        written.append(path)
    if pds_report is not None:
        path = out / "pds_report.csv"
        write_report_csv(pds_report, path)
        written.append(path)

    summary = out / "summary.txt"
    with open(summary, "w", encoding="utf-8") as fh:
        if checks:
            for name, ok in checks:
                fh.write(f"{'PASS' if ok else 'FAIL'}  {name}\n")
        else:
            fh.write("no checks recorded\n")
    written.append(summary)
    return written
