"""Linear dimensionality reduction of sample centroids.

Provides the 1D ordering used to pick an equally spaced roller lineup
and the 2D scatter export used for visual feedback.  The
eigendecomposition is a cyclic Jacobi iteration written here rather
than delegated, so the whole chain stays inspectable; the dense solver
in numpy serves as the test oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def jacobi_eigh(matrix, tol: float = 1e-9, max_sweeps: int = 100):
    """Eigenvalues and eigenvectors of a symmetric matrix by Jacobi rotations.

    Sweeps zero out off-diagonal entries pairwise until their Frobenius
    norm drops below ``tol`` (relative to the matrix norm).  Returns
    (eigenvalues, eigenvectors-as-columns), unsorted.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10):
        raise ValueError("matrix must be symmetric")
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v

    scale = max(float(np.linalg.norm(a)), 1.0)
    for _ in range(max_sweeps):
        off = math.sqrt(max(float((a * a).sum() - (a.diagonal() ** 2).sum()), 0.0))
        if off <= tol * scale:
            return a.diagonal().copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/columns p and q
                rp, rq = a[p].copy(), a[q].copy()
                a[p] = c * rp - s * rq
                a[q] = s * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                 # (D,)
    components: np.ndarray           # (n_components, D), orthonormal rows
    explained_variance: np.ndarray   # (n_components,), non-increasing

    def __post_init__(self):
        if self.components.ndim != 2 or self.mean.ndim != 1:
            raise ValueError("components must be 2-D and mean 1-D")
        if self.components.shape[1] != self.mean.shape[0]:
            raise ValueError("component and mean dimensions disagree")
        if len(self.explained_variance) != len(self.components):
            raise ValueError("one variance per component required")


def pca_fit(vectors, n_components: int) -> PcaModel:
    """Principal axes of the sample covariance (ddof=1), descending variance.

    Sign convention: each axis is flipped so its largest-magnitude
    coordinate is positive, making results reproducible across solvers.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need >= 2 vectors in a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if not 1 <= n_components <= d:
        raise ValueError(f"n_components must be in [1, {d}], got {n_components}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)     # clip eigensolver noise
    axes = eigvecs[:, order].T                    # rows are axes

    comps = axes[:n_components].copy()
    for i, axis in enumerate(comps):
        peak = np.argmax(np.abs(axis))
        if axis[peak] < 0:
            comps[i] = -axis
    return PcaModel(mean=mean, components=comps,
                    explained_variance=eigvals[:n_components].copy())


def project(model: PcaModel, vector, n: int | None = None) -> np.ndarray:
    """Coordinates of (vector - mean) on the first n axes.

    Accepts a single vector or a stack of rows.
    """
    if n is None:
        n = len(model.components)
    if not 1 <= n <= len(model.components):
        raise ValueError(f"n must be in [1, {len(model.components)}], got {n}")
    v = np.asarray(vector, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[1] != model.mean.shape[0]:
        raise ValueError(f"vector dimension {v.shape[1]} != model dimension {model.mean.shape[0]}")
    out = (v - model.mean) @ model.components[:n].T
    return out[0] if single else out


def select_equidistant(scalar_by_sample: dict, count: int) -> list[str]:
    """Pick ``count`` samples spread evenly across the scalar range.

    Targets are t_i = min + i*(max-min)/(count-1).  The chosen samples
    minimize total |scalar - target| subject to strictly increasing
    scalar order (ties prefer the smaller scalar, then the smaller id),
    so the output is always ordered and duplicate-free, and exact-hit
    inputs select exactly the hit samples.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if count > len(scalar_by_sample):
        raise ValueError(f"count {count} exceeds sample count {len(scalar_by_sample)}")
    ids = sorted(scalar_by_sample, key=lambda s: (scalar_by_sample[s], s))
    xs = [float(scalar_by_sample[s]) for s in ids]
    n = len(ids)
    lo, hi = xs[0], xs[-1]
    targets = [lo + i * (hi - lo) / (count - 1) for i in range(count)]

    # dp[i] = best total deviation with the current target assigned to xs[i];
    # strictly increasing positions, earliest position preferred on ties.
    inf = math.inf
    dp = [abs(xs[i] - targets[0]) for i in range(n)]
    back = [[-1] * n]
    for j in range(1, count):
        prev_best = inf
        prev_idx = -1
        ndp = [inf] * n
        nback = [-1] * n
        for i in range(j, n):
            if dp[i - 1] < prev_best:
                prev_best = dp[i - 1]
                prev_idx = i - 1
            if prev_best < inf:
                ndp[i] = prev_best + abs(xs[i] - targets[j])
                nback[i] = prev_idx
        dp = ndp
        back.append(nback)

    last = min(range(count - 1, n), key=lambda i: (dp[i], i))
    picks = [0] * count
    i = last
    for j in range(count - 1, -1, -1):
        picks[j] = i
        i = back[j][i]
    return [ids[i] for i in picks]


def export_map_2d(projections_2d: dict, svg_path, *, size: int = 480,
                  margin: int = 40) -> tuple[Path, Path]:
    """Scatter plot of per-sample 2-D points as a standalone SVG.

    Writes a JSON sidecar next to the SVG with the raw coordinates, one
    entry per sample, so downstream tools need not parse SVG.
    """
    if not projections_2d:
        raise ValueError("no points to export")
    svg_path = Path(svg_path)
    pts = {sid: (float(p[0]), float(p[1])) for sid, p in projections_2d.items()}
    xs = [p[0] for p in pts.values()]
    ys = [p[1] for p in pts.values()]
    span_x = max(xs) - min(xs) or 1.0
    span_y = max(ys) - min(ys) or 1.0
    inner = size - 2 * margin

    def to_px(x, y):
        px = margin + (x - min(xs)) / span_x * inner
        py = size - margin - (y - min(ys)) / span_y * inner   # y up
        return px, py

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for sid in sorted(pts):
        px, py = to_px(*pts[sid])
        parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="4" fill="#2a6f97" '
                     f'fill-opacity="0.8"><title>{sid}</title></circle>')
        parts.append(f'<text x="{px + 6:.2f}" y="{py + 3:.2f}" font-size="9" '
                     f'font-family="sans-serif">{sid}</text>')
    parts.append("</svg>")
    svg_path.write_text("\n".join(parts))

    sidecar = svg_path.with_suffix(".json")
    sidecar.write_text(json.dumps({sid: [pts[sid][0], pts[sid][1]] for sid in sorted(pts)},
                                  sort_keys=True, indent=1))
    return svg_path, sidecar
