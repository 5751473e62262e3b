"""Slow, loop-based reference implementations used only by the tests."""
import math
from fractions import Fraction


def sinc(x):
    if x == 0:
        return 1.0
    return math.sin(math.pi * x) / (math.pi * x)


def kernel(name, x, a=3):
    ax = abs(x)
    if name == "lanczos":
        return sinc(x) * sinc(x / a) if ax < a else 0.0
    if name == "linear":
        return max(0.0, 1.0 - ax)
    if name == "cubic":
        if ax < 1:
            return 1.5 * ax ** 3 - 2.5 * ax ** 2 + 1
        if ax < 2:
            return -0.5 * ax ** 3 + 2.5 * ax ** 2 - 4 * ax + 2
        return 0.0
    return 1.0 if -0.5 <= x < 0.5 else 0.0


SUPPORT = {"lanczos": 3.0, "linear": 1.0, "cubic": 2.0, "nearest": 0.5}


def resample(values, n_out, name="lanczos", a=3, antialias=True):
    """Direct kernel sum with edge clamping and per-sample renormalisation."""
    n_in = len(values)
    scale = n_in / n_out
    fs = scale if (antialias and scale > 1) else 1.0
    support = (a if name == "lanczos" else SUPPORT[name]) * fs
    out = []
    for j in range(n_out):
        c = (j + 0.5) * scale - 0.5
        num = den = 0.0
        for i in range(math.floor(c - support) - 1, math.ceil(c + support) + 2):
            w = kernel(name, (i - c) / fs, a)
            num += w * values[min(max(i, 0), n_in - 1)]
            den += w
        out.append(num / den)
    return out


def resample_grid(rows, n_rows, n_cols, name="lanczos"):
    tmp = [resample(r, n_cols, name) for r in rows]
    cols = [resample([tmp[i][j] for i in range(len(tmp))], n_rows, name) for j in range(n_cols)]
    return [[cols[j][i] for j in range(n_cols)] for i in range(n_rows)]


def macro_bruteforce(cm):
    """Per-class scores by explicit counting, macro-averaged, 0/0 taken as 0."""
    n = len(cm)
    ps, rs, fs = [], [], []
    for c in range(n):
        tp = cm[c][c]
        pred = sum(cm[r][c] for r in range(n))
        true = sum(cm[c][k] for k in range(n))
        p = tp / pred if pred else 0.0
        r = tp / true if true else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return sum(fs) / n, sum(ps) / n, sum(rs) / n


def pr_points_exact(scores, labels):
    """(recall, precision) as Fractions, one point per distinct threshold, high to low."""
    n_pos = sum(labels)
    pts = []
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and not y)
        pts.append((Fraction(tp, n_pos), Fraction(tp, tp + fp)))
    return pts


def partial_auc_exact(points, rmin):
    """Area under the polyline joined in sweep order, restricted to recall >= rmin."""
    rmin = Fraction(rmin)
    pts = list(points)
    if pts[0][0] >= rmin:
        pts = [(rmin, pts[0][1])] + pts
    area = Fraction(0)
    for (r0, p0), (r1, p1) in zip(pts, pts[1:]):
        if r1 <= rmin:
            continue
        if r0 < rmin:
            p0 = p0 + (p1 - p0) * (rmin - r0) / (r1 - r0)
            r0 = rmin
        area += (r1 - r0) * (p0 + p1) / 2
    return area
