"""Whitney covers of node sets in the alpha-parabolic metric.

d(z, y) = max(sqrt(|t - s| / alpha), |x - y|); the closed d-ball of radius r
is the cylinder Q_r^alpha.  Each node z of O gets the dyadic radius
r(z) = h 2^k with D(z)/16 <= r(z) < D(z)/8, D the lattice distance to the
complement.  Cylinders are picked greedily (largest radius first) until the
half cylinders cover O.  With D 1-Lipschitz this gives 8Q in O, 16Q meeting
the complement, disjoint quarter cylinders and comparable neighbour radii.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse

from .grid import gradient_array
from .maximal import ParabolicCylinder, _clip, _cyl_reduce, footprint

__all__ = ["WhitneyCover", "distance_to_complement", "cover", "partition_of_unity",
           "smoothstep", "intersection_measure", "diagnostics"]


def smoothstep(u, a, b):
    """C^2 quintic step: 1 for u <= a, 0 for u >= b."""
    s = np.clip((u - a) / (b - a), 0.0, 1.0)
    return 1.0 - s ** 3 * (10 - 15 * s + 6 * s * s)


def distance_to_complement(O, grid, alpha):
    """Lattice d_alpha distance from each node to the nearest node outside O."""
    O = np.asarray(O, dtype=bool)
    if not O.any():
        return np.zeros(grid.shape)
    e = np.empty(grid.shape)
    for k in range(grid.n_t):
        if O[k].all():
            e[k] = np.inf
        else:
            e[k] = ndimage.distance_transform_edt(O[k], sampling=grid.h)
    D = e.copy()
    nt = grid.n_t
    for dk in range(1, nt):
        dtime = np.sqrt(dk * grid.tau / alpha)
        if dtime >= D.max():
            break
        near = np.full(grid.shape, np.inf)
        near[dk:] = e[:-dk]
        np.minimum(near[:-dk], e[dk:], out=near[:-dk])
        np.minimum(D, np.maximum(dtime, near), out=D)
    return D


def _overlap_measure(dt, lt1, lt2, d, a, b, m):
    """Vectorized |Q1 n Q2| from centre offsets (dt, d), half times and radii."""
    lt = np.clip(np.minimum(dt + lt2, lt1) - np.maximum(dt - lt2, -lt1), 0.0, None)
    if m == 1:
        ls = np.clip(np.minimum(a, d + b) - np.maximum(-a, d - b), 0.0, None)
        return lt * ls
    dd = np.where(d > 0, d, 1.0)
    c1 = np.clip((d * d + a * a - b * b) / (2 * dd * a), -1, 1)
    c2 = np.clip((d * d + b * b - a * a) / (2 * dd * b), -1, 1)
    k = np.clip((-d + a + b) * (d + a - b) * (d - a + b) * (d + a + b), 0.0, None)
    lens = a * a * np.arccos(c1) + b * b * np.arccos(c2) - 0.5 * np.sqrt(k)
    ls = np.where(d >= a + b, 0.0, np.where(d <= np.abs(a - b), np.pi * np.minimum(a, b) ** 2, lens))
    return lt * ls


def intersection_measure(Q1, Q2):
    """Exact Lebesgue measure of Q1 intersected with Q2 (m = 1 or 2)."""
    m = len(Q1.x)
    if m == 1:
        d = Q2.x[0] - Q1.x[0]
    else:
        d = float(np.linalg.norm(np.subtract(Q1.x, Q2.x)))
    return float(_overlap_measure(Q2.t - Q1.t, Q1.half_time, Q2.half_time, d, Q1.r, Q2.r, m))


@dataclass
class WhitneyCover:
    grid: object
    alpha: float
    O: np.ndarray
    centers: np.ndarray          # (J, m+1) node indices
    radii: np.ndarray            # (J,)
    boxes: list = field(default_factory=list)     # local slices of 3/4 Q_j (+margin)
    weights: list = field(default_factory=list)   # rho_j on the local boxes
    neighbors: list = field(default_factory=list)  # A_k as index arrays
    overlap_max: int = 0
    is_point: np.ndarray = None  # cylinders whose 3/4 scaling is a single node
    adjacency: object = None

    def __len__(self):
        return len(self.radii)

    def cylinder(self, j, sigma=1.0):
        return ParabolicCylinder.at_node(self.grid, self.centers[j], sigma * self.radii[j], self.alpha)

    def half_union(self):
        out = np.zeros(self.grid.shape, dtype=bool)
        for j in range(len(self)):
            out |= self.cylinder(j, 0.5).node_mask(self.grid)
        return out

    def rho_full(self, j):
        out = np.zeros(self.grid.shape)
        out[self.boxes[j]] = self.weights[j]
        return out

    def to_json(self):
        g = self.grid
        cyl = []
        for j in range(len(self)):
            Q = self.cylinder(j)
            cyl.append({"t": Q.t, "x": list(Q.x), "r": float(Q.r), "alpha": self.alpha})
        return {"alpha": self.alpha, "m": g.m, "count": len(self), "cylinders": cyl,
                "overlap_max": int(self.overlap_max),
                "neighbors_max": int(max((len(a) for a in self.neighbors), default=0))}

    def save_weights(self, path):
        """Sparse weight dump: per j the box origin, shape and flat values."""
        arrays = {"centers": self.centers, "radii": self.radii}
        for j, (sl, w) in enumerate(zip(self.boxes, self.weights)):
            arrays[f"origin_{j}"] = np.array([s.start for s in sl])
            arrays[f"rho_{j}"] = w
        np.savez_compressed(path, **arrays)


def _check_interior(O):
    for a in range(O.ndim):
        ax = np.moveaxis(O, a, 0)
        if ax[0].any() or ax[-1].any():
            raise ValueError("open set touches the grid boundary; extend the fields first")


def _is_point(grid, radii, alpha):
    """Cylinders whose 3/4 scaling holds no lattice node but the centre."""
    return np.array([footprint(grid, 0.75 * r, alpha)[2] == 1 for r in radii], dtype=bool)


def cover(O, grid, alpha, with_weights=True):
    """Whitney cover of the node set O (greedy, deterministic)."""
    O = np.asarray(O, dtype=bool)
    if O.shape != grid.shape:
        raise ValueError("mask does not match grid")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    empty = WhitneyCover(grid, alpha, O, np.zeros((0, grid.m + 1), dtype=int), np.zeros(0))
    if not O.any():
        return empty
    _check_interior(O)
    D = distance_to_complement(O, grid, alpha)
    nodes = np.argwhere(O)
    dist = D[O]
    k = np.ceil(np.log2(dist / (16 * grid.h)) - 1e-12)
    rad = grid.h * 2.0 ** k
    order = np.lexsort(tuple(nodes[:, a] for a in range(grid.m, -1, -1)) + (-rad,))
    levels = np.unique(rad)
    point_level = dict(zip(levels, _is_point(grid, levels, alpha)))
    point = np.array([point_level[r] for r in rad[order]], dtype=bool)
    covered = np.zeros(grid.shape, dtype=bool)
    sel = []
    # point cylinders have the smallest radii, so they come last in the order
    for i in order[~point]:
        z = tuple(nodes[i])
        if covered[z]:
            continue
        sel.append(i)
        Q = ParabolicCylinder.at_node(grid, nodes[i], 0.5 * rad[i], alpha)
        lo, hi = Q.index_box(grid)
        src, dst = _clip(grid, lo, hi)
        covered[dst] |= Q.box_mask(grid, lo, hi)[src]
    rest = order[point]
    rest = rest[~covered[tuple(nodes[rest].T)]]
    sel = np.concatenate([np.array(sel, dtype=int), rest])
    wc = WhitneyCover(grid, alpha, O, nodes[sel], rad[sel])
    wc.is_point = np.concatenate([np.zeros(len(sel) - len(rest), dtype=bool),
                                  np.ones(len(rest), dtype=bool)])
    if with_weights:
        partition_of_unity(wc)
    return wc


def _theta(grid, Q, lo, hi):
    t = grid.t_start + grid.tau * np.arange(lo[0], hi[0] + 1)
    th = smoothstep(np.abs(t - Q.t) / Q.half_time, 0.25, 0.5625).reshape((-1,) + (1,) * grid.m)
    d2 = 0.0
    for i in range(grid.m):
        x = grid.x_start[i] + grid.h * np.arange(lo[i + 1], hi[i + 1] + 1)
        shp = [1] * grid.m
        shp[i] = -1
        d2 = d2 + ((x - Q.x[i]) ** 2).reshape(shp)
    return th * smoothstep(np.sqrt(d2) / Q.r, 0.5, 0.75)[None]


def partition_of_unity(wc):
    """Fill rho_j = theta_j / sum_k theta_k, neighbour sets and overlap count."""
    grid = wc.grid
    J = len(wc)
    total = np.zeros(grid.shape)
    thetas, boxes = [], []
    flat = np.arange(int(np.prod(grid.shape))).reshape(grid.shape)
    rows, cols = [], []
    is_point = wc.is_point if wc.is_point is not None else np.zeros(J, dtype=bool)
    for j in np.flatnonzero(~is_point):
        Q = wc.cylinder(j, 0.75)
        lo, hi = Q.index_box(grid, margin=2)
        lo = [max(v, 0) for v in lo]
        hi = [min(v, n - 1) for v, n in zip(hi, grid.shape)]
        sl = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
        th = _theta(grid, Q.scaled(4.0 / 3.0), lo, hi)
        total[sl] += th
        thetas.append(th)
        boxes.append(sl)
        idx = flat[sl][Q.box_mask(grid, lo, hi)]
        rows.append(idx)
        cols.append(np.full(idx.size, j))
    pts = np.flatnonzero(is_point)
    pc = tuple(wc.centers[pts].T)
    if pts.size:
        np.add.at(total, pc, 1.0)
        rows.append(flat[pc])
        cols.append(pts)
    if np.any(total[wc.O] <= 0):
        raise AssertionError("partition of unity has a zero denominator inside O")
    weights = [None] * J
    allboxes = [None] * J
    for j, sl, th in zip(np.flatnonzero(~is_point), boxes, thetas):
        den = total[sl]
        weights[j] = np.where(th > 0, th / np.where(den > 0, den, 1.0), 0.0)
        allboxes[j] = sl
    one = (1,) * (grid.m + 1)
    for j, c, v in zip(pts, wc.centers[pts], 1.0 / total[pc] if pts.size else []):
        allboxes[j] = tuple(slice(i, i + 1) for i in c)
        weights[j] = np.full(one, v)
    wc.boxes, wc.weights = allboxes, weights
    wc.overlap_max = _overlap(wc)
    wc.adjacency = _adjacency(J, flat.size, rows, cols)
    wc.neighbors = np.split(wc.adjacency.indices, wc.adjacency.indptr[1:-1]) if J else []
    return wc


def _overlap(wc):
    """max over O of the number of sets 4Q_j containing a node."""
    grid = wc.grid
    if len(wc) == 0:
        return 0
    count = np.zeros(grid.shape)
    for r in np.unique(wc.radii):
        ind = np.zeros(grid.shape)
        sel = wc.radii == r
        ind[tuple(wc.centers[sel].T)] = 1.0
        kt, rows, _ = footprint(grid, 4 * r, wc.alpha)
        count += _cyl_reduce(ind, grid, kt, rows, "sum")
    return int(np.rint(count[wc.O]).max())


def _adjacency(J, n, rows, cols):
    """CSR pattern of j in A_k (3/4 cylinders sharing a node)."""
    if J == 0:
        return sparse.csr_matrix((0, 0))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    S = sparse.csr_matrix((np.ones(rows.size, dtype=np.int32), (rows, cols)), shape=(n, J))
    A = (S.T @ S).tocsr()
    A.sort_indices()
    return A


def _local(grid, Q):
    lo, hi = Q.index_box(grid)
    src, dst = _clip(grid, lo, hi)
    full = Q.box_mask(grid, lo, hi)
    return dst, full[src], int(full.sum() - full[src].sum())


def _class_reduce(wc, sel, sigma, values=None):
    """Per-node sum over the sigma-scaled cylinders of one radius class.

    With ``values`` given, returns instead the sum of ``values`` over each
    such cylinder, read at the class centres.
    """
    grid = wc.grid
    r = wc.radii[sel][0]
    kt, rows, _ = footprint(grid, sigma * r, wc.alpha)
    if values is None:
        ind = np.zeros(grid.shape)
        ind[tuple(wc.centers[sel].T)] = 1.0
        return _cyl_reduce(ind, grid, kt, rows, "sum")
    return _cyl_reduce(values, grid, kt, rows, "sum")[tuple(wc.centers[sel].T)]


def _inside_grid(wc, sel, sigma):
    grid = wc.grid
    kt, rows, _ = footprint(grid, sigma * wc.radii[sel][0], wc.alpha)
    reach = np.array([kt] + [max(abs(d) for d, _ in rows) if grid.m == 2 else rows[0][1]]
                     + ([max(w for _, w in rows)] if grid.m == 2 else []))
    c = wc.centers[sel]
    return np.all((c - reach >= 0) & (c + reach <= np.array(grid.shape) - 1), axis=1)


def diagnostics(wc):
    """Grid-exact checks of the covering and partition properties."""
    grid = wc.grid
    J = len(wc)
    out = {"count": J, "overlap_max": wc.overlap_max,
           "neighbors_max": int(max((len(a) for a in wc.neighbors), default=0))}
    if J == 0:
        out.update(w1=not wc.O.any(), w2=True, w3=True, w4=True, w6_min=float("inf"),
                   p1=True, p3_max=0.0, p4_err=0.0, p4_local_err=0.0)
        return out
    point = wc.is_point if wc.is_point is not None else np.zeros(J, dtype=bool)
    half = np.zeros(grid.shape)
    quarter = np.zeros(grid.shape)
    notO = (~wc.O).astype(float)
    w2 = True
    p3 = 0.0
    for r in np.unique(wc.radii):
        sel = wc.radii == r
        half += _class_reduce(wc, sel, 0.5)
        quarter += _class_reduce(wc, sel, 0.25)
        # 8Q inside O and on the grid; 16Q meets the complement or leaves the grid
        w2 &= bool(np.all(_inside_grid(wc, sel, 8.0) & (_class_reduce(wc, sel, 8.0, notO) == 0)))
        w2 &= bool(np.all(~_inside_grid(wc, sel, 16.0) | (_class_reduce(wc, sel, 16.0, notO) > 0)))
        if np.any(sel & point):
            # seminorms are 1-homogeneous, so one unit spike per radius suffices
            unit = _seminorm(np.ones((1,) * (grid.m + 1)), grid, r, wc.alpha)
            vals = np.array([wc.weights[j].item() for j in np.flatnonzero(sel & point)])
            p3 = max(p3, unit * float(vals.max()))
    total = np.zeros(grid.shape)
    p1 = True
    for j in np.flatnonzero(~point):
        sl, rho = wc.boxes[j], wc.weights[j]
        total[sl] += rho
        lo = [b.start for b in sl]
        hi = [b.stop - 1 for b in sl]
        p1 &= bool(np.all(rho >= 0) and np.all(rho <= 1 + 1e-14))
        p1 &= bool(np.all(wc.cylinder(j, 0.75).box_mask(grid, lo, hi)[rho > 0]))
        p1 &= bool(np.all(rho[wc.cylinder(j, 0.5).box_mask(grid, lo, hi)] > 0))
        p3 = max(p3, _seminorm(rho, grid, wc.radii[j], wc.alpha))
    pts = np.flatnonzero(point)
    if pts.size:
        vals = np.array([wc.weights[j].item() for j in pts])
        p1 &= bool(np.all(vals > 0) and np.all(vals <= 1 + 1e-14))
        np.add.at(total, tuple(wc.centers[pts].T), vals)
    out["w1"] = bool(np.array_equal(half > 0.5, wc.O))
    out["w2"] = bool(w2)
    out["w4"] = bool(quarter.max() <= 1.5)
    out["p1"] = p1
    out["p3_max"] = p3
    out["p4_err"] = float(np.abs(total[wc.O] - 1).max())
    A = wc.adjacency
    k = np.repeat(np.arange(J), np.diff(A.indptr))
    j = A.indices
    rj, rk = wc.radii[j], wc.radii[k]
    out["w3"] = bool(np.all((0.5 * rk <= rj) & (rj <= 2 * rk)))
    ck, cj = wc.centers[k], wc.centers[j]
    dt = (cj[:, 0] - ck[:, 0]) * grid.tau
    dx = (cj[:, 1:] - ck[:, 1:]) * grid.h
    d = dx[:, 0] if grid.m == 1 else np.linalg.norm(dx, axis=1)
    inter = _overlap_measure(dt, wc.alpha * rk ** 2, wc.alpha * rj ** 2, d, rk, rj, grid.m)
    ball = (lambda r: 2 * r) if grid.m == 1 else (lambda r: np.pi * r ** 2)
    meas = np.maximum(2 * wc.alpha * rk ** 2 * ball(rk), 2 * wc.alpha * rj ** 2 * ball(rj))
    out["w6_min"] = float((inter / meas).min())
    # (P4) locally: on 3/4 Q_k only the neighbours of k carry weight
    p4 = float(np.abs(total[tuple(wc.centers[pts].T)] - 1).max()) if pts.size else 0.0
    for kk in np.flatnonzero(~point):
        dst, mk, _ = _local(grid, wc.cylinder(kk, 0.75))
        s = np.zeros(mk.shape)
        for jj in wc.neighbors[kk]:
            sl = wc.boxes[jj]
            a = [max(x.start, y.start) for x, y in zip(sl, dst)]
            b = [min(x.stop, y.stop) for x, y in zip(sl, dst)]
            if any(u >= v for u, v in zip(a, b)):
                continue
            src = tuple(slice(u - x.start, v - x.start) for u, v, x in zip(a, b, sl))
            tgt = tuple(slice(u - y.start, v - y.start) for u, v, y in zip(a, b, dst))
            s[tgt] += wc.weights[jj][src]
        p4 = max(p4, float(np.abs(s[mk] - 1).max()))
    out["p4_local_err"] = p4
    return out


def _seminorm(rho, grid, r, alpha):
    rho = np.pad(rho, 2)
    g = gradient_array(rho, grid.h)
    hess = np.stack([gradient_array(g[..., i], grid.h) for i in range(grid.m)], axis=-1)
    dt = np.diff(rho, axis=0) / grid.tau
    return float(np.abs(rho).max() + r * np.linalg.norm(g, axis=-1).max()
                 + r * r * np.sqrt((hess ** 2).sum(axis=(-1, -2))).max()
                 + alpha * r * r * (np.abs(dt).max() if dt.size else 0.0))
