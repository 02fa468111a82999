"""Superpixel segmentation by iterative local clustering, for grayscale rasters.

Clusters live in an (intensity, y, x) feature space. Pixel-to-center distance
is |dI| + (compactness / S) * sqrt(dy^2 + dx^2) with S = sqrt(target_area), so
compactness trades intensity homogeneity against spatial regularity on the
same scale regardless of region size. Assignment is windowed to 2S x 2S per
center. A post-pass enforces that every region is one 4-connected blob and
absorbs regions far below the target area.

Everything here is deterministic: ties in assignment go to the lowest cluster
id, seeding and merge orders are fixed scans, and no randomness is consumed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image
from scipy import sparse
from scipy.sparse import csgraph

from .images import BinaryMask, GrayImage


@dataclass(frozen=True)
class SlicParams:
    """Knobs for slic_segment.

    ``seed`` is carried for config/report stability; the clustering is fully
    deterministic and never draws from it.
    """

    target_area: int = 30
    iterations: int = 10
    # Weight of the spatial term relative to intensity (both on a 0-1 scale).
    # 0.5 keeps clusters spatially coherent even on heavily textured or noisy
    # input, where a weaker pull lets same-intensity pixels scatter across
    # centers and the connectivity pass collapses the region count.
    compactness: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.target_area < 1:
            raise ValueError(f"target_area must be >= 1, got {self.target_area}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not (self.compactness > 0):
            raise ValueError(f"compactness must be > 0, got {self.compactness}")


@dataclass(frozen=True, eq=False)
class SuperpixelLabeling:
    """A partition of the raster into region_count 4-connected regions.

    ``labels`` maps each pixel to a region id in [0, region_count); every id
    is used by at least one pixel.
    """

    labels: np.ndarray
    region_count: int

    def __post_init__(self):
        arr = np.array(self.labels, dtype=np.int32, copy=True, order="C")
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"labels must be a non-empty 2-D array, got shape {arr.shape}")
        if self.region_count < 1:
            raise ValueError(f"region_count must be >= 1, got {self.region_count}")
        if int(arr.min()) < 0 or int(arr.max()) >= self.region_count:
            raise ValueError(
                f"label values must lie in [0, {self.region_count}), "
                f"found [{arr.min()}, {arr.max()}]"
            )
        if np.bincount(arr.ravel(), minlength=self.region_count).min() == 0:
            raise ValueError("every region id must label at least one pixel")
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @classmethod
    def _wrap(cls, labels: np.ndarray, region_count: int) -> "SuperpixelLabeling":
        obj = object.__new__(cls)
        labels.flags.writeable = False
        object.__setattr__(obj, "labels", labels)
        object.__setattr__(obj, "region_count", region_count)
        return obj

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def label_areas(labeling: SuperpixelLabeling) -> np.ndarray:
    """Pixel count per region id; sums to width * height."""
    return np.bincount(labeling.labels.ravel(), minlength=labeling.region_count)


def region_mask(labeling: SuperpixelLabeling, region_ids: Iterable[int]) -> BinaryMask:
    """Mask with a bit set exactly where the pixel's region id is in the set."""
    kept = np.zeros(labeling.region_count, dtype=bool)
    for rid in region_ids:
        if not (0 <= rid < labeling.region_count):
            raise ValueError(f"region id {rid} outside [0, {labeling.region_count})")
        kept[rid] = True
    return BinaryMask._wrap(kept[labeling.labels])


def grid_labeling(height: int, width: int, cell: int) -> SuperpixelLabeling:
    """Partition into square cells of side ``cell`` (edge cells are clipped)."""
    if height < 1 or width < 1:
        raise ValueError(f"degenerate raster {height}x{width}")
    if cell < 1:
        raise ValueError(f"cell side must be >= 1, got {cell}")
    ncols = (width + cell - 1) // cell
    nrows = (height + cell - 1) // cell
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    labels = ((yy // cell) * ncols + xx // cell).astype(np.int32)
    return SuperpixelLabeling._wrap(np.ascontiguousarray(labels), nrows * ncols)


def _component_map(labels: np.ndarray) -> np.ndarray:
    """Component id per pixel under 4-adjacency restricted to equal labels."""
    h, w = labels.shape
    n = h * w
    idx = np.arange(n, dtype=np.int64).reshape(h, w)
    right = labels[:, :-1] == labels[:, 1:]
    down = labels[:-1, :] == labels[1:, :]
    row = np.concatenate([idx[:, :-1][right], idx[:-1, :][down]])
    col = np.concatenate([idx[:, 1:][right], idx[1:, :][down]])
    graph = sparse.coo_matrix(
        (np.ones(len(row), dtype=bool), (row, col)), shape=(n, n)
    )
    _, comp = csgraph.connected_components(graph, directed=False)
    return comp.reshape(h, w)


def four_connected(labeling: SuperpixelLabeling) -> bool:
    """True when every region is a single 4-connected component."""
    comp = _component_map(labeling.labels)
    comps_per_label: dict[int, set[int]] = {}
    for lab, c in zip(labeling.labels.ravel().tolist(), comp.ravel().tolist()):
        comps_per_label.setdefault(lab, set()).add(c)
    return all(len(cs) == 1 for cs in comps_per_label.values())


def _seed_centers(image: np.ndarray, spacing: float) -> np.ndarray:
    """Near-regular grid of initial centers, each snapped to the lowest-gradient
    pixel of its 3x3 neighborhood (ties resolved row-major)."""
    h, w = image.shape
    ny = max(1, int(round(h / spacing)))
    nx = max(1, int(round(w / spacing)))
    gy, gx = np.gradient(image)
    grad = gy * gy + gx * gx
    centers = np.empty((ny * nx, 3), dtype=np.float64)  # columns: intensity, y, x
    k = 0
    for iy in range(ny):
        sy = min(h - 1, int((iy + 0.5) * h / ny))
        for ix in range(nx):
            sx = min(w - 1, int((ix + 0.5) * w / nx))
            y0, y1 = max(0, sy - 1), min(h, sy + 2)
            x0, x1 = max(0, sx - 1), min(w, sx + 2)
            window = grad[y0:y1, x0:x1]
            flat = int(np.argmin(window))  # first minimum in row-major order
            py = y0 + flat // window.shape[1]
            px = x0 + flat % window.shape[1]
            centers[k] = (image[py, px], float(py), float(px))
            k += 1
    return centers


def _assign(image: np.ndarray, centers: np.ndarray, half_width: float, spatial_weight: float):
    """One windowed assignment sweep over a 2S x 2S region per center (S on
    each side). Strict < with ascending center order makes the lowest cluster
    id win distance ties, independent of threading."""
    h, w = image.shape
    dist = np.full((h, w), np.inf)
    labels = np.full((h, w), -1, dtype=np.int32)
    ys = np.arange(h, dtype=np.float64)
    xs = np.arange(w, dtype=np.float64)
    for k in range(len(centers)):
        ci, cy, cx = centers[k]
        y0 = max(0, int(math.floor(cy - half_width)))
        y1 = min(h, int(math.floor(cy + half_width)) + 1)
        x0 = max(0, int(math.floor(cx - half_width)))
        x1 = min(w, int(math.floor(cx + half_width)) + 1)
        dy = ys[y0:y1, None] - cy
        dx = xs[None, x0:x1] - cx
        d = np.abs(image[y0:y1, x0:x1] - ci) + spatial_weight * np.sqrt(dy * dy + dx * dx)
        win_dist = dist[y0:y1, x0:x1]
        better = d < win_dist
        win_dist[better] = d[better]
        labels[y0:y1, x0:x1][better] = k
    if (labels < 0).any():
        _assign_stragglers(image, centers, spatial_weight, dist, labels)
    return labels


def _assign_stragglers(image, centers, spatial_weight, dist, labels) -> None:
    """Full-distance nearest center for pixels no window reached."""
    miss_y, miss_x = np.nonzero(labels < 0)
    for start in range(0, len(miss_y), 4096):
        ys = miss_y[start : start + 4096]
        xs = miss_x[start : start + 4096]
        di = np.abs(image[ys, xs][:, None] - centers[None, :, 0])
        dy = ys[:, None] - centers[None, :, 1]
        dx = xs[:, None] - centers[None, :, 2]
        d = di + spatial_weight * np.sqrt(dy * dy + dx * dx)
        best = np.argmin(d, axis=1)  # ties fall to the lowest center id
        labels[ys, xs] = best
        dist[ys, xs] = d[np.arange(len(best)), best]


def _update_centers(image: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> np.ndarray:
    k = len(centers)
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=k).astype(np.float64)
    sums_i = np.bincount(flat, weights=image.ravel(), minlength=k)
    yy, xx = np.meshgrid(
        np.arange(labels.shape[0], dtype=np.float64),
        np.arange(labels.shape[1], dtype=np.float64),
        indexing="ij",
    )
    sums_y = np.bincount(flat, weights=yy.ravel(), minlength=k)
    sums_x = np.bincount(flat, weights=xx.ravel(), minlength=k)
    out = centers.copy()
    live = counts > 0  # empty clusters keep their previous center
    out[live, 0] = sums_i[live] / counts[live]
    out[live, 1] = sums_y[live] / counts[live]
    out[live, 2] = sums_x[live] / counts[live]
    return out


def _absorb_orphan_fragments(labels: np.ndarray) -> None:
    """Reassign every non-largest 4-connected fragment of each label to the
    largest adjacent already-settled region (ties: lowest label id). In-place.
    """
    h, w = labels.shape
    comp = _component_map(labels)
    comp_flat = comp.ravel()
    comp_sizes = np.bincount(comp_flat)
    first_idx = np.full(comp_sizes.shape[0], -1, dtype=np.int64)
    seen_order = np.unique(comp_flat, return_index=True)
    first_idx[seen_order[0]] = seen_order[1]
    comp_label = labels.ravel()[first_idx]

    by_label: dict[int, list[int]] = {}
    for c in range(len(comp_sizes)):
        by_label.setdefault(int(comp_label[c]), []).append(c)

    main = set()
    for lab, comps in by_label.items():
        best = max(comps, key=lambda c: (comp_sizes[c], -c))
        main.add(best)

    settled = np.isin(comp, sorted(main))
    live_area = np.zeros(labels.max() + 1, dtype=np.int64)
    for c in main:
        live_area[comp_label[c]] += comp_sizes[c]

    comp_pixels: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    orphan_ids = [c for c in range(len(comp_sizes)) if c not in main]
    if not orphan_ids:
        return
    orphan_set = np.isin(comp, orphan_ids)
    oy, ox = np.nonzero(orphan_set)
    order = np.argsort(comp[oy, ox], kind="stable")
    oy, ox = oy[order], ox[order]
    bounds = np.searchsorted(comp[oy, ox], orphan_ids, side="left")
    bounds = np.append(bounds, len(oy))
    for i, c in enumerate(orphan_ids):
        comp_pixels[c] = (oy[bounds[i] : bounds[i + 1]], ox[bounds[i] : bounds[i + 1]])

    queue = deque(orphan_ids)
    stuck = 0
    while queue:
        c = queue.popleft()
        py, px = comp_pixels[c]
        candidates: dict[int, None] = {}
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            ny, nx = py + dy, px + dx
            ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
            ny, nx = ny[ok], nx[ok]
            hit = settled[ny, nx]
            for lab in np.unique(labels[ny[hit], nx[hit]]):
                candidates[int(lab)] = None
        if not candidates:
            queue.append(c)  # neighbors are all orphans; retry once they settle
            stuck += 1
            if stuck > len(queue):
                raise AssertionError("orphan absorption made no progress")
            continue
        stuck = 0
        target = max(candidates, key=lambda lab: (live_area[lab], -lab))
        labels[py, px] = target
        settled[py, px] = True
        live_area[target] += len(py)


def _merge_small_regions(labels: np.ndarray, min_area: float) -> int:
    """Fold regions below min_area into their largest 4-connected neighbor,
    then compact ids ascending. In-place; returns the final region count."""
    k = int(labels.max()) + 1
    area = np.bincount(labels.ravel(), minlength=k).astype(np.int64)

    right_a, right_b = labels[:, :-1], labels[:, 1:]
    down_a, down_b = labels[:-1, :], labels[1:, :]
    pairs = np.concatenate(
        [
            np.stack([right_a[right_a != right_b], right_b[right_a != right_b]], axis=1),
            np.stack([down_a[down_a != down_b], down_b[down_a != down_b]], axis=1),
        ]
    )
    adj: list[set[int]] = [set() for _ in range(k)]
    for a, b in np.unique(pairs, axis=0).tolist():
        adj[a].add(b)
        adj[b].add(a)

    parent = list(range(k))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    small = [lab for lab in range(k) if area[lab] < min_area]
    for lab in small:
        if find(lab) != lab or area[lab] >= min_area:
            continue  # already absorbed, or grew past the bar by absorbing others
        neighbors = {find(n) for n in adj[lab]} - {lab}
        if not neighbors:
            continue  # single-region image; nothing to merge into
        target = max(neighbors, key=lambda n: (area[n], -n))
        parent[lab] = target
        area[target] += area[lab]
        adj[target] |= adj[lab]
        for n in adj[lab]:
            adj[n].discard(lab)
            adj[n].add(target)
        adj[target].discard(target)

    # Clusters that ended assignment with zero pixels have no adjacency and can
    # never absorb area; drop them so every surviving id labels >= 1 pixel.
    roots = sorted(r for r in {find(lab) for lab in range(k)} if area[r] > 0)
    remap = np.zeros(k, dtype=np.int32)
    for new_id, root in enumerate(roots):
        remap[root] = new_id
    resolve = np.array([remap[find(lab)] for lab in range(k)], dtype=np.int32)
    labels[:] = resolve[labels]
    return len(roots)


def slic_segment(image: GrayImage, params: SlicParams = SlicParams()) -> SuperpixelLabeling:
    """Segment into roughly area/target_area compact intensity-homogeneous regions."""
    h, w = image.shape
    if h * w < params.target_area:
        raise ValueError(
            f"image area {h * w} is smaller than target_area {params.target_area}"
        )
    data = image.data
    spacing = math.sqrt(params.target_area)
    spatial_weight = params.compactness / spacing

    centers = _seed_centers(data, spacing)
    labels = None
    for _ in range(params.iterations):
        labels = _assign(data, centers, spacing, spatial_weight)
        centers = _update_centers(data, labels, centers)
    assert labels is not None

    _absorb_orphan_fragments(labels)
    count = _merge_small_regions(labels, params.target_area / 4.0)
    return SuperpixelLabeling._wrap(np.ascontiguousarray(labels), count)


def save_label_png(labeling: SuperpixelLabeling, path: str | Path) -> None:
    """Debug dump of the label map as a 16-bit grayscale PNG."""
    if labeling.region_count > 65536:
        raise ValueError("more than 65536 regions cannot be stored in 16 bits")
    arr = labeling.labels.astype(np.uint16)
    Image.fromarray(arr).save(Path(path), format="PNG")
