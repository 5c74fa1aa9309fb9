"""Evaluation: pixel precision/recall/F1, accurate and relaxed IoU,
mask-to-graph extraction, and the average path length similarity (APLS)
between ground-truth and proposal road graphs.

Relaxed IoU with buffer b uses the symmetric relaxed-true-positive form

    IoU_r = (|pred & dilate(gt,b)| + |gt & dilate(pred,b)|) / (|pred| + |gt|)

with Chebyshev-disk dilation, so masks that agree within the buffer score
exactly 1. APLS follows the published SpaceNet-style procedure: nodes of
one graph snap to the other within a radius, per-pair shortest-path
lengths are compared, unmatched pairs score 0, and the two directional
means combine by harmonic mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

REPORT_COLUMNS = ("precision", "recall", "f1", "iou_a", "iou_r", "apls")


@dataclass
class MetricsReport:
    precision: float
    recall: float
    f1: float
    iou_a: float
    iou_r: float
    apls: float

    def csv_row(self) -> str:
        return ",".join(f"{getattr(self, c):.6f}" for c in REPORT_COLUMNS)

    def text_block(self) -> str:
        lines = [
            "evaluation report",
            "  relaxed IoU = (|pred & dilate(gt,b)| + |gt & dilate(pred,b)|) / (|pred| + |gt|), Chebyshev buffer b=4",
        ]
        for c in REPORT_COLUMNS:
            lines.append(f"  {c:10s} {getattr(self, c):.6f}")
        return "\n".join(lines)


@dataclass
class RoadGraph:
    """Undirected spatial graph: nodes with (row, col) coordinates and
    edges carrying traced geometric length. May be disconnected; never
    contains self-loops."""

    nodes: dict[int, tuple[float, float]] = field(default_factory=dict)
    edges: list[tuple[int, int, float]] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def to_networkx(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        for nid, pos in self.nodes.items():
            g.add_node(nid, pos=pos)
        for u, v, length in self.edges:
            g.add_edge(u, v, weight=length)
        return g


# ---------------------------------------------------------------------
# pixel metrics
# ---------------------------------------------------------------------

def confusion_counts(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> tuple[int, int, int, int]:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p = pred >= threshold if pred.dtype.kind == "f" else pred.astype(bool)
    g = gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return tp, fp, fn, tn


def ratios_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float, float]:
    """(precision, recall, f1, iou_a) with empty-side conventions:
    no predicted positives -> precision 0 unless gt is empty too."""
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    iou = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    return precision, recall, f1, iou


def pixel_metrics(pred: np.ndarray, gt: np.ndarray, threshold: float = 0.5) -> tuple[float, float, float, float]:
    """Standard confusion ratios on the thresholded prediction."""
    tp, fp, fn, _ = confusion_counts(pred, gt, threshold)
    return ratios_from_counts(tp, fp, fn)


def dilate_chebyshev(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation by a Chebyshev disk (square) of the given radius,
    done as separable sliding-window ORs."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    out = mask.astype(bool)
    for axis in (0, 1):
        acc = out.copy()
        for d in range(1, radius + 1):
            shifted = np.zeros_like(out)
            src = [slice(None), slice(None)]
            dst = [slice(None), slice(None)]
            src[axis] = slice(d, None)
            dst[axis] = slice(None, -d)
            shifted[tuple(dst)] = out[tuple(src)]
            acc |= shifted
            shifted = np.zeros_like(out)
            src[axis] = slice(None, -d)
            dst[axis] = slice(d, None)
            shifted[tuple(dst)] = out[tuple(src)]
            acc |= shifted
        out = acc
    return out


def relaxed_iou(pred: np.ndarray, gt: np.ndarray, buffer: int = 4) -> float:
    """Relaxed IoU tolerating misalignment up to `buffer` pixels."""
    if buffer < 0:
        raise ValueError(f"buffer must be >= 0, got {buffer}")
    counts = relaxed_counts(pred, gt, buffer)
    return relaxed_iou_from_counts(*counts)


def relaxed_counts(pred: np.ndarray, gt: np.ndarray, buffer: int) -> tuple[int, int, int, int]:
    p = pred.astype(bool)
    g = gt.astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
    tp_p = int(np.count_nonzero(p & dilate_chebyshev(g, buffer)))
    tp_g = int(np.count_nonzero(g & dilate_chebyshev(p, buffer)))
    return tp_p, tp_g, int(p.sum()), int(g.sum())


def relaxed_iou_from_counts(tp_p: int, tp_g: int, n_pred: int, n_gt: int) -> float:
    if n_pred + n_gt == 0:
        return 1.0
    return (tp_p + tp_g) / (n_pred + n_gt)


# ---------------------------------------------------------------------
# skeletonization and graph extraction
# ---------------------------------------------------------------------

def _shift(p: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """result[r, c] = p[r+dr, c+dc], zero-filled at the border."""
    out = np.zeros_like(p)
    src_r = slice(max(dr, 0), p.shape[0] + min(dr, 0))
    src_c = slice(max(dc, 0), p.shape[1] + min(dc, 0))
    dst_r = slice(max(-dr, 0), p.shape[0] + min(-dr, 0))
    dst_c = slice(max(-dc, 0), p.shape[1] + min(-dc, 0))
    out[dst_r, dst_c] = p[src_r, src_c]
    return out


def zhang_suen_thin(mask: np.ndarray) -> np.ndarray:
    """Morphological thinning to a 1-px 8-connected skeleton.

    Classic two-subiteration scheme over the clockwise neighbor ring
    P2..P9 = N, NE, E, SE, S, SW, W, NW.
    """
    img = mask.astype(bool).copy()
    offsets = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]
    while True:
        changed = False
        for step in (0, 1):
            ring = [_shift(img, dr, dc) for dr, dc in offsets]
            p2, _, p4, _, p6, _, p8, _ = ring
            b = sum(x.astype(np.int8) for x in ring)
            a = sum(((~ring[i]) & ring[(i + 1) % 8]).astype(np.int8) for i in range(8))
            if step == 0:
                extra = (~(p2 & p4 & p6)) & (~(p4 & p6 & p8))
            else:
                extra = (~(p2 & p4 & p8)) & (~(p2 & p6 & p8))
            cond = img & (b >= 2) & (b <= 6) & (a == 1) & extra
            if cond.any():
                img &= ~cond
                changed = True
        if not changed:
            break
    return img


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _neighbors_of(p, pixels):
    r, c = p
    return [(r + dr, c + dc) for dr, dc in _NEIGHBORS if (r + dr, c + dc) in pixels]


def _step_len(a, b) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def mask_to_graph(mask: np.ndarray, skeletonize: bool = True) -> RoadGraph:
    """Extract the road graph from a binary mask.

    The mask is thinned to a skeleton; pixels of degree != 2 (endpoints,
    junctions) cluster into nodes placed at the cluster centroid, and
    degree-2 chains between clusters become edges whose length sums the
    pixel steps (1 axial, sqrt(2) diagonal) plus the stub from the entry
    pixel to each centroid. Isolated cycles get an anchor plus a midpoint
    node; chains returning to their own node split at the midpoint, so
    the graph never carries self-loops.
    """
    skel = zhang_suen_thin(mask) if skeletonize else mask.astype(bool)
    pixels = set(zip(*np.nonzero(skel)))
    graph = RoadGraph()
    if not pixels:
        return graph
    deg = {p: len(_neighbors_of(p, pixels)) for p in pixels}
    node_pixels = {p for p, d in deg.items() if d != 2}

    # Junction pixels (degree >= 3) come in adjacent blobs on 8-connected
    # skeletons; each blob is one node at its centroid. Endpoints and
    # isolated pixels (degree <= 1) stay singleton nodes.
    cluster_of: dict[tuple, int] = {}
    centroids: dict[int, tuple[float, float]] = {}
    junction = {p for p in node_pixels if deg[p] >= 3}
    for p in sorted(junction):
        if p in cluster_of:
            continue
        cid = len(centroids)
        stack = [p]
        members = []
        cluster_of[p] = cid
        while stack:
            q = stack.pop()
            members.append(q)
            for nb in _neighbors_of(q, pixels):
                if nb in junction and nb not in cluster_of:
                    cluster_of[nb] = cid
                    stack.append(nb)
        arr = np.asarray(members, dtype=np.float64)
        centroids[cid] = (float(arr[:, 0].mean()), float(arr[:, 1].mean()))
    for p in sorted(node_pixels - junction):
        cid = len(centroids)
        cluster_of[p] = cid
        centroids[cid] = (float(p[0]), float(p[1]))
    for cid, pos in centroids.items():
        graph.nodes[cid] = pos

    def add_edge(u: int, v: int, length: float, midpoint):
        if u == v:
            mid = len(graph.nodes)
            graph.nodes[mid] = (float(midpoint[0]), float(midpoint[1]))
            graph.edges.append((u, mid, length / 2.0))
            graph.edges.append((mid, v, length / 2.0))
        else:
            graph.edges.append((u, v, length))

    used: set[tuple] = set()          # directed half-edges consumed by traces
    chain_pixels: set[tuple] = set()
    for p in sorted(node_pixels):
        for q in sorted(_neighbors_of(p, pixels)):
            if (p, q) in used:
                continue
            used.add((p, q))
            if q in node_pixels:
                used.add((q, p))
                if cluster_of[p] != cluster_of[q]:
                    # adjacent distinct clusters: direct stub edge
                    add_edge(cluster_of[p], cluster_of[q],
                             _step_len(centroids[cluster_of[p]], p) + _step_len(p, q)
                             + _step_len(q, centroids[cluster_of[q]]), p)
                continue
            path = [p, q]
            length = _step_len(p, q)
            prev, cur = p, q
            while cur not in node_pixels:
                chain_pixels.add(cur)
                nbs = [n for n in _neighbors_of(cur, pixels) if n != prev]
                if not nbs:
                    break  # dangling pixel (degree 1 would be a node; safety)
                nxt = nbs[0]
                length += _step_len(cur, nxt)
                used.add((cur, nxt))
                used.add((nxt, cur))
                prev, cur = cur, nxt
                path.append(cur)
            if cur in node_pixels:
                used.add((cur, prev))
                u, v = cluster_of[p], cluster_of[cur]
                length += _step_len(centroids[u], p) + _step_len(cur, centroids[v])
                add_edge(u, v, length, path[len(path) // 2])

    # isolated single pixels become bare nodes (already clusters, no edges)
    # remaining untouched degree-2 pixels are isolated cycles
    remaining = pixels - node_pixels - chain_pixels
    visited_cycle: set[tuple] = set()
    for anchor in sorted(remaining):
        if anchor in visited_cycle:
            continue
        aid = len(graph.nodes)
        graph.nodes[aid] = (float(anchor[0]), float(anchor[1]))
        visited_cycle.add(anchor)
        nbs = sorted(_neighbors_of(anchor, pixels))
        path = [anchor]
        length = 0.0
        prev, cur = anchor, nbs[0]
        while cur != anchor:
            visited_cycle.add(cur)
            length += _step_len(prev, cur)
            path.append(cur)
            nxt = [n for n in _neighbors_of(cur, pixels) if n != prev][0]
            prev, cur = cur, nxt
        length += _step_len(prev, anchor)
        add_edge(aid, aid, length, path[len(path) // 2])
    return graph


# ---------------------------------------------------------------------
# APLS
# ---------------------------------------------------------------------

def _snap_nodes(src: RoadGraph, dst: RoadGraph, radius: float) -> dict[int, int | None]:
    dst_ids = sorted(dst.nodes)
    dst_pos = np.asarray([dst.nodes[i] for i in dst_ids], dtype=np.float64)
    snapped: dict[int, int | None] = {}
    for nid, pos in src.nodes.items():
        d = np.hypot(dst_pos[:, 0] - pos[0], dst_pos[:, 1] - pos[1])
        best = int(np.argmin(d))
        snapped[nid] = dst_ids[best] if d[best] <= radius else None
    return snapped


def _directional_score(a: RoadGraph, b: RoadGraph, radius: float) -> float:
    ga, gb = a.to_networkx(), b.to_networkx()
    lengths_a = dict(nx.all_pairs_dijkstra_path_length(ga, weight="weight"))
    lengths_b = dict(nx.all_pairs_dijkstra_path_length(gb, weight="weight"))
    snap = _snap_nodes(a, b, radius)
    ids = sorted(a.nodes)
    scores = []
    for i, u in enumerate(ids):
        for v in ids[i + 1:]:
            if v not in lengths_a.get(u, {}):
                continue  # not connected in the source graph: not a pair
            da = lengths_a[u][v]
            su, sv = snap[u], snap[v]
            if su is None or sv is None:
                scores.append(0.0)
                continue
            db = lengths_b.get(su, {}).get(sv)
            if db is None:
                scores.append(0.0)
                continue
            if da == 0.0:
                scores.append(1.0 if db == 0.0 else 0.0)
            else:
                scores.append(1.0 - min(1.0, abs(da - db) / da))
    if not scores:
        return 1.0
    return float(np.mean(scores))


def apls(gt: RoadGraph, proposal: RoadGraph, snap_radius: float = 4.0) -> float:
    """Harmonic mean of the two directional path-length scores."""
    if snap_radius < 0:
        raise ValueError(f"snap radius must be >= 0, got {snap_radius}")
    if gt.is_empty and proposal.is_empty:
        return 1.0
    if gt.is_empty or proposal.is_empty:
        return 0.0
    c_gt = _directional_score(gt, proposal, snap_radius)
    c_prop = _directional_score(proposal, gt, snap_radius)
    if c_gt + c_prop == 0.0:
        return 0.0
    return 2.0 * c_gt * c_prop / (c_gt + c_prop)


# ---------------------------------------------------------------------
# dataset-level evaluation
# ---------------------------------------------------------------------

def evaluate_predictions(pred_probs: list[np.ndarray], gt_masks: list[np.ndarray],
                         threshold: float = 0.5, buffer: int = 4,
                         snap_radius: float = 4.0) -> MetricsReport:
    """Micro-averaged pixel metrics (counts pooled before ratios) plus
    per-tile-averaged APLS."""
    tp = fp = fn = 0
    rtp_p = rtp_g = rn_p = rn_g = 0
    apls_scores = []
    for prob, gt in zip(pred_probs, gt_masks):
        ctp, cfp, cfn, _ = confusion_counts(prob, gt, threshold)
        tp, fp, fn = tp + ctp, fp + cfp, fn + cfn
        pred_bin = (prob >= threshold) if prob.dtype.kind == "f" else prob.astype(bool)
        a, b, c, d = relaxed_counts(pred_bin, gt, buffer)
        rtp_p, rtp_g, rn_p, rn_g = rtp_p + a, rtp_g + b, rn_p + c, rn_g + d
        apls_scores.append(apls(mask_to_graph(gt), mask_to_graph(pred_bin), snap_radius))
    precision, recall, f1, iou_a = ratios_from_counts(tp, fp, fn)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        iou_a=iou_a,
        iou_r=relaxed_iou_from_counts(rtp_p, rtp_g, rn_p, rn_g),
        apls=float(np.mean(apls_scores)) if apls_scores else 1.0,
    )
