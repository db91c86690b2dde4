"""Layout metrics: IoU/mIoU under optimal matching, alignment, overlap, BDE and FID*.

FID* is the Fréchet distance between Gaussian fits of hand-built layout descriptors (no
pretrained image network).  All box metrics work on canvas-normalized coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .document import MAX_ELEMENTS, BBox, Document
from .errors import InsufficientDataError, InvalidInputError, PairingError


@dataclass(frozen=True)
class NormBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def right(self):
        return self.x + self.w

    @property
    def bottom(self):
        return self.y + self.h

    @property
    def area(self):
        return self.w * self.h


def norm_box(bbox: BBox, canvas_w: float, canvas_h: float) -> NormBox:
    """Normalize by the canvas and clip to the unit square."""
    x0 = min(max(bbox.x / canvas_w, 0.0), 1.0)
    y0 = min(max(bbox.y / canvas_h, 0.0), 1.0)
    x1 = min(max((bbox.x + bbox.w) / canvas_w, 0.0), 1.0)
    y1 = min(max((bbox.y + bbox.h) / canvas_h, 0.0), 1.0)
    return NormBox(x0, y0, x1 - x0, y1 - y0)


def doc_boxes(doc: Document) -> list[NormBox]:
    return [norm_box(e.bbox, doc.canvas_w, doc.canvas_h) for e in doc.elements]


def intersection(a: NormBox, b: NormBox) -> float:
    iw = min(a.right, b.right) - max(a.x, b.x)
    ih = min(a.bottom, b.bottom) - max(a.y, b.y)
    return iw * ih if iw > 0 and ih > 0 else 0.0


def iou(a: NormBox, b: NormBox) -> float:
    inter = intersection(a, b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def bde(pred: NormBox, gt: NormBox) -> float:
    """Mean absolute displacement of the left, right, top and bottom edges."""
    return (abs(pred.x - gt.x) + abs(pred.right - gt.right)
            + abs(pred.y - gt.y) + abs(pred.bottom - gt.bottom)) / 4.0


# ---------------------------------------------------------------------------
# assignment


def _hungarian_duals(c: np.ndarray):
    """Shortest-augmenting-path Hungarian method; returns (row->col, row duals, col duals)."""
    n = c.shape[0]
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = c
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lexicographic_tight_matching(tight: np.ndarray, match: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching inside the ``tight`` edge set.

    ``match`` is any perfect matching within ``tight``; rows are fixed one at a time to the
    smallest column that still admits a completion (checked by an alternating-path search).
    """
    n = len(match)
    match = match.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    fixed_cols = np.zeros(n, dtype=bool)

    for i in range(n):
        target = match[i]  # the column row i releases if it moves
        for j in np.flatnonzero(tight[i] & ~fixed_cols):
            if j == target:
                break
            # row r = owner[j] must move; find alternating path r -> ... -> target using rows > i
            visited = np.zeros(n, dtype=bool)
            visited[j] = True
            path = _augment(owner[j], target, tight, owner, fixed_cols, visited, i)
            if path is not None:
                for r, col in path:
                    match[r] = col
                    owner[col] = r
                match[i] = j
                owner[j] = i
                break
        fixed_cols[match[i]] = True
    return match


def _augment(r, target, tight, owner, fixed_cols, visited, i):
    # iterative DFS over (row, column) moves; returns the list of reassignments or None
    stack = [(r, iter(np.flatnonzero(tight[r] & ~fixed_cols)))]
    moves = []
    while stack:
        row, cols = stack[-1]
        advanced = False
        for c in cols:
            if visited[c]:
                continue
            visited[c] = True
            if c == target:
                return moves + [(row, c)]
            nxt = owner[c]
            if nxt > i:
                moves.append((row, c))
                stack.append((nxt, iter(np.flatnonzero(tight[nxt] & ~fixed_cols))))
                advanced = True
                break
        if not advanced:
            stack.pop()
            if moves:
                moves.pop()
    return None


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Exact minimum-cost assignment of an n x n matrix.

    Returns ``(col_of_row, total_cost)``.  Among optimal assignments the lexicographically
    smallest ``col_of_row`` is returned.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix contains NaN or infinite entries")
    n = c.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    match, u, v = _hungarian_duals(c)
    tol = 1e-9 * (1.0 + np.abs(c).max())
    tight = (c - u[:, None] - v[None, :]) <= tol
    match = _lexicographic_tight_matching(tight, match)
    return match, float(c[np.arange(n), match].sum())


# ---------------------------------------------------------------------------
# per-document scores


def m_iou(generated: Document, reference: Document) -> float:
    """Category-wise optimal matching of summed IoU over max(|gen|, |ref|)."""
    ng, nr = len(generated.elements), len(reference.elements)
    if ng == 0 and nr == 0:
        return 1.0
    if ng == 0 or nr == 0:
        return 0.0
    gb, rb = doc_boxes(generated), doc_boxes(reference)
    total = 0.0
    for cat in sorted({e.category for e in generated.elements} & {e.category for e in reference.elements}):
        gi = [i for i, e in enumerate(generated.elements) if e.category == cat]
        ri = [i for i, e in enumerate(reference.elements) if e.category == cat]
        n = max(len(gi), len(ri))
        score = np.zeros((n, n))
        for a, i in enumerate(gi):
            for b, j in enumerate(ri):
                score[a, b] = iou(gb[i], rb[j])
        match, cost = hungarian(-score)
        total += -cost
    return total / max(ng, nr)


def _anchors(b: NormBox):
    return (b.x, b.x + b.w / 2, b.right, b.y, b.y + b.h / 2, b.bottom)


def alignment(doc: Document) -> float:
    """Mean over elements of the smallest same-anchor gap to any other element."""
    boxes = doc_boxes(doc)
    n = len(boxes)
    if n < 2:
        return 0.0
    A = np.array([_anchors(b) for b in boxes])  # n x 6
    gaps = np.abs(A[:, None, :] - A[None, :, :]).min(-1)
    np.fill_diagonal(gaps, np.inf)
    return float(gaps.min(1).mean())


def overlap(doc: Document) -> float:
    """Total pairwise intersection area over total element area."""
    boxes = doc_boxes(doc)
    area = sum(b.area for b in boxes)
    if area <= 0:
        return 0.0
    inter = 0.0
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            inter += intersection(boxes[i], boxes[j])
    return inter / area


# ---------------------------------------------------------------------------
# FID*


def layout_features(doc: Document, n_categories: int, max_elements: int = MAX_ELEMENTS) -> np.ndarray:
    """Per category (count fraction, mean center-x, mean center-y, mean area), then
    (element count / max_elements, mean aspect ratio)."""
    out = np.zeros(4 * n_categories + 2)
    n = len(doc.elements)
    if n == 0:
        return out
    boxes = doc_boxes(doc)
    for c in range(n_categories):
        idx = [i for i, e in enumerate(doc.elements) if e.category == c]
        if not idx:
            continue
        bs = [boxes[i] for i in idx]
        out[4 * c] = len(idx) / n
        out[4 * c + 1] = np.mean([b.x + b.w / 2 for b in bs])
        out[4 * c + 2] = np.mean([b.y + b.h / 2 for b in bs])
        out[4 * c + 3] = np.mean([b.area for b in bs])
    out[-2] = n / max_elements
    out[-1] = np.mean([e.bbox.w / e.bbox.h for e in doc.elements if e.bbox.h > 0] or [0.0])
    return out


def gaussian_stats(descriptors) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientDataError("need at least two descriptors for a covariance estimate")
    mu = X.mean(0)
    D = X - mu
    cov = D.T @ D / (X.shape[0] - 1)
    return mu, (cov + cov.T) / 2


def jacobi_eigh(A, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigenvalues, Q)`` with ``A ~= Q diag(eigenvalues) Q^T``.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    Q = np.eye(n)
    if n < 2:
        return np.diag(A).copy(), Q
    scale = np.abs(A).max()
    if scale == 0:
        return np.zeros(n), Q
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                Ap, Aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap, Aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Qp, Qq = Q[:, p].copy(), Q[:, q].copy()
                Q[:, p] = c * Qp - s * Qq
                Q[:, q] = s * Qp + c * Qq
    return np.diag(A).copy(), Q


def sqrtm_psd(A) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative eigenvalues are clamped to zero."""
    w, Q = jacobi_eigh(A)
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def singular_values(A, max_sweeps: int = 100) -> np.ndarray:
    """Singular values by one-sided (Hestenes) Jacobi rotations, high relative accuracy."""
    U = np.array(A, dtype=np.float64)
    n = U.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = float(U[:, p] @ U[:, p])
                beta = float(U[:, q] @ U[:, q])
                gamma = float(U[:, p] @ U[:, q])
                if gamma == 0.0 or abs(gamma) <= 1e-15 * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                up, uq = U[:, p].copy(), U[:, q].copy()
                U[:, p] = c * up - s * uq
                U[:, q] = s * up + c * uq
        if not rotated:
            break
    return np.sqrt(np.sum(U * U, axis=0))


def _check_symmetric(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[0] != S.shape[1]:
        raise InvalidInputError(f"{name} is not square")
    if np.abs(S - S.T).max(initial=0.0) > 1e-8:
        raise InvalidInputError(f"{name} is not symmetric")
    return S


def frechet(mu1, sigma1, mu2, sigma2) -> float:
    """Fréchet distance between N(mu1, sigma1) and N(mu2, sigma2), clamped at 0."""
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    s1, s2 = _check_symmetric(sigma1, "sigma1"), _check_symmetric(sigma2, "sigma2")
    if mu1.shape != mu2.shape or s1.shape != s2.shape or s1.shape[0] != mu1.shape[0]:
        raise InvalidInputError("mean/covariance dimensions disagree")
    # Tr sqrt(S1^1/2 S2 S1^1/2) is the sum of singular values of S2^1/2 S1^1/2.  Taking them
    # directly avoids square roots of tiny, noise-level eigenvalues, which would turn ~1e-16
    # rounding into ~1e-8 errors on ill-conditioned covariances.
    tr_sqrt = float(np.sum(singular_values(sqrtm_psd(s2) @ sqrtm_psd(s1))))
    diff = mu1 - mu2
    d = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr_sqrt)
    return max(d, 0.0)


def frechet_star(generated: Sequence[Document], reference: Sequence[Document], n_categories: int,
                 max_elements: int = MAX_ELEMENTS) -> float:
    g = gaussian_stats([layout_features(d, n_categories, max_elements) for d in generated])
    r = gaussian_stats([layout_features(d, n_categories, max_elements) for d in reference])
    return frechet(g[0], g[1], r[0], r[1])


# ---------------------------------------------------------------------------
# corpus report

TABLE1_COLUMNS = ("mIoU", "FID*", "Align", "Over")
TABLE2_COLUMNS = ("IoU", "BDE")


@dataclass
class MetricsReport:
    task: str
    n_pairs: int
    m_iou: Optional[float] = None
    frechet: Optional[float] = None
    alignment: Optional[float] = None
    overlap: Optional[float] = None
    iou_single: Optional[float] = None
    iou_multiple: Optional[float] = None
    bde_single: Optional[float] = None
    bde_multiple: Optional[float] = None
    counts: dict = field(default_factory=dict)

    def table(self) -> dict:
        if self.task == "placement":
            return {
                "Single": {"IoU": self.iou_single, "BDE": self.bde_single},
                "Multiple": {"IoU": self.iou_multiple, "BDE": self.bde_multiple},
            }
        return dict(zip(TABLE1_COLUMNS, (self.m_iou, self.frechet, self.alignment, self.overlap)))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "m_iou": self.m_iou,
            "frechet_star": self.frechet,
            "alignment": self.alignment,
            "overlap": self.overlap,
            "iou": {"single": self.iou_single, "multiple": self.iou_multiple},
            "bde": {"single": self.bde_single, "multiple": self.bde_multiple},
            "n_pairs": self.n_pairs,
            "counts": self.counts,
            "table": self.table(),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def pair_documents(generated: Sequence[Document], reference: Sequence[Document]) -> list[tuple[Document, Document]]:
    gen = {}
    for d in generated:
        gen.setdefault(d.id, d)
    ref = {}
    for d in reference:
        ref.setdefault(d.id, d)
    offenders = sorted(set(gen) ^ set(ref))
    dupes = sorted({d.id for d in generated if sum(x.id == d.id for x in generated) > 1}
                   | {d.id for d in reference if sum(x.id == d.id for x in reference) > 1})
    if offenders or dupes:
        raise PairingError(f"unpaired or duplicate document ids: {(offenders + dupes)[:20]}", offenders + dupes)
    return [(gen[k], ref[k]) for k in sorted(gen)]


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def evaluate(generated: Sequence[Document], reference: Sequence[Document], task: str = "completion",
             n_categories: Optional[int] = None, targets: Optional[Mapping[str, Sequence[int]]] = None,
             max_elements: int = MAX_ELEMENTS) -> MetricsReport:
    """Score generated documents against references paired by id.

    ``task="placement"`` needs ``targets``: document id -> placed element indices.  Documents
    with one target count towards the Single column, the rest towards Multiple.
    """
    if task not in ("completion", "placement"):
        raise InvalidInputError(f"unknown task {task!r}")
    pairs = pair_documents(generated, reference)
    if n_categories is None:
        n_categories = 1 + max([e.category for d in list(generated) + list(reference) for e in d.elements] or [0])
    report = MetricsReport(task, len(pairs))
    report.m_iou = _mean([m_iou(g, r) for g, r in pairs])
    non_empty = [g for g, _ in pairs if g.elements]
    report.alignment = _mean([alignment(g) for g in non_empty])
    report.overlap = _mean([overlap(g) for g in non_empty])
    if len(pairs) >= 2:
        report.frechet = frechet_star([g for g, _ in pairs], [r for _, r in pairs], n_categories, max_elements)
    report.counts = {"n_pairs": len(pairs), "n_generated_elements": sum(len(g.elements) for g, _ in pairs),
                     "n_reference_elements": sum(len(r.elements) for _, r in pairs)}
    if task == "placement":
        if targets is None:
            raise InvalidInputError("placement evaluation needs target indices")
        single_iou, single_bde, multi_iou, multi_bde = [], [], [], []
        for g, r in pairs:
            idx = list(targets.get(g.id, ()))
            for i in idx:
                if i >= len(g.elements) or i >= len(r.elements):
                    raise PairingError(f"target {i} missing in document {g.id!r}", [g.id])
                a = norm_box(g.elements[i].bbox, g.canvas_w, g.canvas_h)
                b = norm_box(r.elements[i].bbox, r.canvas_w, r.canvas_h)
                (single_iou if len(idx) == 1 else multi_iou).append(iou(a, b))
                (single_bde if len(idx) == 1 else multi_bde).append(bde(a, b))
        report.iou_single, report.bde_single = _mean(single_iou), _mean(single_bde)
        report.iou_multiple, report.bde_multiple = _mean(multi_iou), _mean(multi_bde)
        report.counts.update(n_single_targets=len(single_iou), n_multiple_targets=len(multi_iou))
    return report
