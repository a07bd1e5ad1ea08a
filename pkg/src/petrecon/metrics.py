"""Image quality metrics, significance testing, and per-dose reports.

PSNR assumes a fixed data range of 1.0 (images are normalized). SSIM is the
standard single-scale index with an 11x11 Gaussian window (sigma 1.5),
C1 = (0.01)^2, C2 = (0.03)^2, averaged over valid window positions. NMSE is
the energy-normalized squared error sum((p - t)^2) / sum(t^2).

The paired t-test computes its two-sided p-value through the regularized
incomplete beta function (continued-fraction evaluation), so no external
statistics package is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn.tensorops import ShapeError
from .phantom import SliceSample

__all__ = [
    "psnr",
    "ssim",
    "nmse",
    "accuracy",
    "paired_t_test",
    "regularized_incomplete_beta",
    "SliceMetrics",
    "DrfRow",
    "MetricsReport",
    "evaluate_prediction",
    "render_report_table",
    "render_report_csv",
    "write_per_slice_csv",
    "read_per_slice_csv",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


# ---------------------------------------------------------------------------
# Scalar metrics
# ---------------------------------------------------------------------------

def _check_pair(pred: np.ndarray, target: np.ndarray, op: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: shapes {pred.shape} and {target.shape} differ")


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for data range 1.0.

    Identical images return +inf.
    """
    _check_pair(pred, target, "psnr")
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    window = np.outer(g, g)
    return window / window.sum()


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Single-scale structural similarity over valid window positions."""
    _check_pair(pred, target, "ssim")
    h, w = pred.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}x"
                         f"{SSIM_WINDOW}, got {h}x{w}")
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    window = _gaussian_window()

    from numpy.lib.stride_tricks import sliding_window_view
    wx = sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW))
    wy = sliding_window_view(y, (SSIM_WINDOW, SSIM_WINDOW))
    mu_x = np.tensordot(wx, window, axes=([2, 3], [0, 1]))
    mu_y = np.tensordot(wy, window, axes=([2, 3], [0, 1]))
    xx = np.tensordot(wx * wx, window, axes=([2, 3], [0, 1]))
    yy = np.tensordot(wy * wy, window, axes=([2, 3], [0, 1]))
    xy = np.tensordot(wx * wy, window, axes=([2, 3], [0, 1]))
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y

    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def nmse(pred: np.ndarray, target: np.ndarray) -> float:
    """Squared error normalized by the target energy."""
    _check_pair(pred, target, "nmse")
    t = np.asarray(target, dtype=np.float64)
    energy = float(np.sum(t * t))
    if energy == 0.0:
        raise ValueError("nmse undefined for a zero-energy target")
    diff = np.asarray(pred, dtype=np.float64) - t
    return float(np.sum(diff * diff)) / energy


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of rows whose argmax matches the label; ties pick the
    lowest class index."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"need logits (N, K) and labels (N,), got "
                         f"{logits.shape} and {labels.shape}")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


# ---------------------------------------------------------------------------
# Paired t-test via the regularized incomplete beta function
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    result = d
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
        result *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        result *= delta
        if abs(delta - 1.0) < 1e-12:
            return result
    raise RuntimeError(f"incomplete beta continued fraction did not converge "
                       f"for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t-test; returns (t statistic, p-value).

    Uses the sample standard deviation of the differences (n - 1
    denominator). Zero-variance differences make p undefined and raise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"need two equal-length 1D vectors, got shapes "
                         f"{a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValueError(f"paired t-test needs n >= 2, got {n}")
    d = a - b
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise ValueError("paired t-test undefined: differences have zero variance")
    t = float(np.mean(d)) * math.sqrt(n) / sd
    dof = n - 1
    # P(|T| > |t|) = I_x(dof/2, 1/2) with x = dof / (dof + t^2)
    x = dof / (dof + t * t)
    p = regularized_incomplete_beta(dof / 2.0, 0.5, x)
    return t, min(1.0, p)


# ---------------------------------------------------------------------------
# Per-dose evaluation reports
# ---------------------------------------------------------------------------

@dataclass
class SliceMetrics:
    subject_id: int
    slice_index: int
    drf: int
    psnr: float
    ssim: float
    nmse: float


@dataclass
class DrfRow:
    drf: int
    n_slices: int
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    nmse_mean: float
    nmse_std: float
    psnr_inf_count: int = 0
    p_psnr: float | None = None
    p_ssim: float | None = None
    p_nmse: float | None = None


@dataclass
class MetricsReport:
    model: str
    rows: list[DrfRow] = field(default_factory=list)
    baseline: str | None = None


def _mean_std(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.inf, 0.0
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def evaluate_prediction(predict, samples: list[SliceSample], model: str = "rpet",
                        baseline_slices: list[SliceMetrics] | None = None,
                        baseline_name: str | None = None,
                        batch_size: int = 32):
    """Metric report for a reconstruction function over slice samples.

    ``predict`` maps a batch (N, 1, H, W) of LPET inputs to reconstructions
    of the same shape. Returns ``(MetricsReport, per_slice_list)``. When a
    baseline per-slice list is given, paired two-sided t-tests against it are
    attached per DRF (pairs matched on subject, slice, and DRF). Infinite
    PSNR values are excluded from the mean and counted in the row.
    """
    if not samples:
        raise ValueError("evaluation sample list is empty")
    per_slice: list[SliceMetrics] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        lpet = np.stack([s.lpet for s in chunk]).astype(np.float32)[:, None]
        pred = predict(lpet)
        for s, out in zip(chunk, pred[:, 0]):
            per_slice.append(SliceMetrics(
                subject_id=s.subject_id, slice_index=s.slice_index, drf=s.drf,
                psnr=psnr(out, s.spet), ssim=ssim(out, s.spet),
                nmse=nmse(out, s.spet)))

    baseline_map = None
    if baseline_slices is not None:
        baseline_map = {(m.subject_id, m.slice_index, m.drf): m
                        for m in baseline_slices}

    report = MetricsReport(model=model, baseline=baseline_name)
    for drf in sorted({m.drf for m in per_slice}):
        group = [m for m in per_slice if m.drf == drf]
        finite_psnr = [m.psnr for m in group if math.isfinite(m.psnr)]
        psnr_mean, psnr_std = _mean_std(finite_psnr)
        ssim_mean, ssim_std = _mean_std([m.ssim for m in group])
        nmse_mean, nmse_std = _mean_std([m.nmse for m in group])
        row = DrfRow(drf=drf, n_slices=len(group),
                     psnr_mean=psnr_mean, psnr_std=psnr_std,
                     ssim_mean=ssim_mean, ssim_std=ssim_std,
                     nmse_mean=nmse_mean, nmse_std=nmse_std,
                     psnr_inf_count=len(group) - len(finite_psnr))
        if baseline_map is not None:
            pairs = [(m, baseline_map[(m.subject_id, m.slice_index, m.drf)])
                     for m in group
                     if (m.subject_id, m.slice_index, m.drf) in baseline_map]
            if len(pairs) >= 2:
                for attr, slot in (("psnr", "p_psnr"), ("ssim", "p_ssim"),
                                   ("nmse", "p_nmse")):
                    ours = [getattr(m, attr) for m, _ in pairs]
                    theirs = [getattr(bm, attr) for _, bm in pairs]
                    if all(map(math.isfinite, ours + theirs)):
                        try:
                            _, p = paired_t_test(ours, theirs)
                        except ValueError:
                            p = None
                        setattr(row, slot, p)
        report.rows.append(row)
    return report, per_slice


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _num(x: float, nd: int = 3) -> str:
    if math.isinf(x):
        return "inf"
    return f"{x:.{nd}f}"


def render_report_table(reports: list[MetricsReport]) -> str:
    """Aligned plain-text table: one row per model, metric columns grouped
    by DRF."""
    drfs = sorted({row.drf for rep in reports for row in rep.rows})
    header1 = ["model"]
    header2 = [""]
    for drf in drfs:
        header1 += [f"DRF={drf}", "", ""]
        header2 += ["PSNR", "SSIM", "NMSE"]
    lines = []
    table: list[list[str]] = [header1, header2]
    for rep in reports:
        by_drf = {row.drf: row for row in rep.rows}
        cells = [rep.model]
        for drf in drfs:
            row = by_drf.get(drf)
            if row is None:
                cells += ["-", "-", "-"]
            else:
                star = lambda p: ("*" if p is not None and p < 0.05 else "")
                cells.append(_num(row.psnr_mean) + star(row.p_psnr))
                cells.append(_num(row.ssim_mean) + star(row.p_ssim))
                cells.append(_num(row.nmse_mean, 4) + star(row.p_nmse))
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    for r in table:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    footnotes = []
    for rep in reports:
        for row in rep.rows:
            if row.psnr_inf_count:
                footnotes.append(f"note: {rep.model} DRF={row.drf}: "
                                 f"{row.psnr_inf_count} infinite PSNR value(s) "
                                 "excluded from the mean")
    if any(rep.baseline for rep in reports):
        footnotes.append("note: * marks p < 0.05 against baseline "
                         f"'{next(rep.baseline for rep in reports if rep.baseline)}'")
    return "\n".join(lines + footnotes) + "\n"


def render_report_csv(reports: list[MetricsReport]) -> str:
    rows = ["model,drf,n_slices,psnr_mean,psnr_std,psnr_inf_count,"
            "ssim_mean,ssim_std,nmse_mean,nmse_std,p_psnr,p_ssim,p_nmse"]
    fmt = lambda v: "" if v is None else repr(float(v))
    for rep in reports:
        for row in rep.rows:
            rows.append(",".join([
                rep.model, str(row.drf), str(row.n_slices),
                fmt(row.psnr_mean), fmt(row.psnr_std), str(row.psnr_inf_count),
                fmt(row.ssim_mean), fmt(row.ssim_std),
                fmt(row.nmse_mean), fmt(row.nmse_std),
                fmt(row.p_psnr), fmt(row.p_ssim), fmt(row.p_nmse),
            ]))
    return "\n".join(rows) + "\n"


PER_SLICE_HEADER = "subject,slice,drf,psnr,ssim,nmse"


def write_per_slice_csv(per_slice: list[SliceMetrics], path) -> None:
    rows = [PER_SLICE_HEADER]
    for m in per_slice:
        rows.append(f"{m.subject_id},{m.slice_index},{m.drf},"
                    f"{m.psnr!r},{m.ssim!r},{m.nmse!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


def read_per_slice_csv(path) -> list[SliceMetrics]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != PER_SLICE_HEADER:
        raise ValueError(f"{path}: expected header '{PER_SLICE_HEADER}'")
    out = []
    for ln in lines[1:]:
        sub, sl, drf, p, s, nm = ln.split(",")
        out.append(SliceMetrics(int(sub), int(sl), int(drf),
                                float(p), float(s), float(nm)))
    return out
