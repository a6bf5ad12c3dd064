"""alpha-parabolic cylinders and the maximal operators M, M-sharp and N.

Cylinders are quantized: centres on grid nodes, radii dyadic multiples of
h.  A node z = (t, x) lies in Q = Q_r^alpha(t_c, x_c) iff
|t - t_c| <= alpha r^2 and |x - x_c| <= r (closed), so Q has time half
length alpha r^2.  Averages treat the field as zero off the grid and divide
by the full lattice count of Q.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import SpaceTimeField, gradient_array

__all__ = [
    "ParabolicCylinder",
    "dyadic_radii",
    "footprint",
    "lattice_count",
    "m_q",
    "cylinder_averages",
    "m_alpha",
    "m_alpha_sup",
    "superlevel",
    "sharp_mq",
    "sharp_alpha",
    "n_q",
    "n_alpha",
    "test_family",
]

_TOL = 1e-9


@dataclass(frozen=True)
class ParabolicCylinder:
    t: float
    x: tuple
    r: float
    alpha: float

    def __post_init__(self):
        if not (self.r > 0 and self.alpha > 0):
            raise ValueError("radius and alpha must be positive")
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))

    @property
    def half_time(self):
        return self.alpha * self.r ** 2

    def scaled(self, sigma):
        return ParabolicCylinder(self.t, self.x, sigma * self.r, self.alpha)

    @classmethod
    def at_node(cls, grid, index, r, alpha):
        t = grid.t_start + index[0] * grid.tau
        x = tuple(grid.x_start[i] + index[i + 1] * grid.h for i in range(grid.m))
        return cls(t, x, r, alpha)

    def measure(self):
        ball = 2 * self.r if len(self.x) == 1 else np.pi * self.r ** 2
        return 2 * self.half_time * ball

    def contains(self, t, x):
        x = np.atleast_1d(x)
        d = np.sqrt(np.sum((x - np.asarray(self.x)) ** 2))
        return abs(t - self.t) <= self.half_time * (1 + _TOL) and d <= self.r * (1 + _TOL)

    def index_box(self, grid, margin=0):
        """Index ranges (unclipped) of a box covering Q plus ``margin`` nodes."""
        lo = [int(np.floor((self.t - self.half_time - grid.t_start) / grid.tau + _TOL)) - margin]
        hi = [int(np.ceil((self.t + self.half_time - grid.t_start) / grid.tau - _TOL)) + margin]
        for i in range(grid.m):
            lo.append(int(np.floor((self.x[i] - self.r - grid.x_start[i]) / grid.h + _TOL)) - margin)
            hi.append(int(np.ceil((self.x[i] + self.r - grid.x_start[i]) / grid.h - _TOL)) + margin)
        return lo, hi

    def box_mask(self, grid, lo, hi):
        """Membership mask over the index box [lo, hi] (may extend off grid)."""
        t = grid.t_start + grid.tau * np.arange(lo[0], hi[0] + 1)
        dt = np.abs(t - self.t) <= self.half_time * (1 + _TOL) + _TOL * grid.tau
        d2 = 0.0
        for i in range(grid.m):
            x = grid.x_start[i] + grid.h * np.arange(lo[i + 1], hi[i + 1] + 1)
            shp = [1] * grid.m
            shp[i] = -1
            d2 = d2 + ((x - self.x[i]) ** 2).reshape(shp)
        ds = d2 <= (self.r * (1 + _TOL)) ** 2 + (_TOL * grid.h) ** 2
        return dt.reshape((-1,) + (1,) * grid.m) & ds[None]

    def node_mask(self, grid):
        lo, hi = self.index_box(grid)
        full = np.zeros(grid.shape, dtype=bool)
        src, dst = _clip(grid, lo, hi)
        full[dst] = self.box_mask(grid, lo, hi)[src]
        return full


def _clip(grid, lo, hi):
    """Slices (into the box, into the grid) of the box/grid intersection."""
    src, dst = [], []
    for a, n in enumerate(grid.shape):
        a0, a1 = max(lo[a], 0), min(hi[a], n - 1)
        if a1 < a0:
            a0, a1 = 0, -1
        src.append(slice(a0 - lo[a], a1 - lo[a] + 1))
        dst.append(slice(a0, a1 + 1))
    return tuple(src), tuple(dst)


def lattice_count(grid, Q):
    """Number of nodes of the infinite lattice inside Q."""
    k = (Q.t - grid.t_start) / grid.tau
    ks = [(Q.x[i] - grid.x_start[i]) / grid.h for i in range(grid.m)]
    if all(abs(v - round(v)) < 1e-9 for v in [k] + ks):
        return footprint(grid, Q.r, Q.alpha)[2]
    lo, hi = Q.index_box(grid)
    return int(Q.box_mask(grid, lo, hi).sum())


def dyadic_radii(grid, alpha, k_min=0):
    """h 2^k from h 2^k_min up to the first radius whose cylinder covers the grid."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    span_t = (grid.n_t - 1) * grid.tau
    span_x = np.sqrt(sum(((n - 1) * grid.h) ** 2 for n in grid.n_space))
    need = max(np.sqrt(span_t / alpha), span_x)
    radii = []
    k = k_min
    while True:
        r = grid.h * 2.0 ** k
        radii.append(r)
        if r >= need:
            break
        k += 1
    return radii


def footprint(grid, r, alpha):
    """(kt, rows, count) for a node-centred cylinder.

    ``rows`` lists (offset along axis 1, half width along the last axis) for
    m = 2, or is [(0, ks)] for m = 1.
    """
    kt = int(np.floor(alpha * r * r / grid.tau * (1 + _TOL) + _TOL))
    rho = r / grid.h * (1 + _TOL) + _TOL
    ks = int(np.floor(rho))
    if grid.m == 1:
        rows = [(0, ks)]
    else:
        rows = [(d, int(np.floor(np.sqrt(max(rho * rho - d * d, 0.0))))) for d in range(-ks, ks + 1)]
    count = (2 * kt + 1) * sum(2 * w + 1 for _, w in rows)
    return kt, rows, count


def _shift(a, axis, d, fill):
    """b[i] = a[i - d] along ``axis`` with constant fill."""
    if d == 0:
        return a
    out = np.full_like(a, fill)
    n = a.shape[axis]
    if abs(d) >= n:
        return out
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if d > 0:
        src[axis], dst[axis] = slice(0, n - d), slice(d, n)
    else:
        src[axis], dst[axis] = slice(-d, n), slice(0, n + d)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _box_sum(a, axis, k):
    k = min(k, a.shape[axis] - 1)
    if k == 0:
        return a
    if k <= 8:
        return ndimage.correlate1d(a, np.ones(2 * k + 1), axis=axis, mode="constant", cval=0.0)
    # wide windows: running sums, O(n) per line
    a = np.moveaxis(a, axis, 0)
    n = a.shape[0]
    c = np.zeros((n + 2 * k + 2,) + a.shape[1:])
    np.cumsum(a, axis=0, out=c[k + 1:k + 1 + n])
    c[k + 1 + n:] = c[k + n]
    out = c[2 * k + 1:2 * k + 1 + n] - c[:n]
    return np.moveaxis(out, 0, axis)


def _box_max(a, axis, k, fill):
    k = min(k, a.shape[axis] - 1)
    if k == 0:
        return a
    return ndimage.maximum_filter1d(a, 2 * k + 1, axis=axis, mode="constant", cval=fill)


def _cyl_reduce(a, grid, kt, rows, op):
    m = grid.m
    if op == "sum":
        a = _box_sum(a, 0, kt)
        if m == 1:
            return _box_sum(a, 1, rows[0][1])
        out = np.zeros_like(a)
        cache = {}
        for d, w in rows:
            if abs(d) >= a.shape[1]:
                continue
            if w not in cache:
                cache[w] = _box_sum(a, 2, w)
            out += _shift(cache[w], 1, d, 0.0)
        return out
    fill = -np.inf if a.dtype.kind == "f" else 0
    a = _box_max(a, 0, kt, fill)
    if m == 1:
        return _box_max(a, 1, rows[0][1], fill)
    out = np.full_like(a, fill)
    cache = {}
    for d, w in rows:
        if w not in cache:
            cache[w] = _box_max(a, 2, w, fill)
        np.maximum(out, _shift(cache[w], 1, d, fill), out=out)
    return out


def _abs_values(f):
    if isinstance(f, SpaceTimeField):
        return f.norm()
    return np.abs(np.asarray(f, dtype=float))


def m_q(f, Q):
    """Mean of |f| over Q (zero off the grid, full lattice count)."""
    a = _abs_values(f)
    grid = f.grid
    lo, hi = Q.index_box(grid)
    mask = Q.box_mask(grid, lo, hi)
    src, dst = _clip(grid, lo, hi)
    return float(np.sum(a[dst] * mask[src]) / mask.sum())


def cylinder_averages(f, grid, r, alpha):
    """Averages of |f| over the node-centred cylinders of radius r."""
    kt, rows, count = footprint(grid, r, alpha)
    return _cyl_reduce(_abs_values(f), grid, kt, rows, "sum") / count


def m_alpha(f, alpha, radii=None):
    """M^alpha f at every node (sup over quantized cylinders containing it)."""
    grid = f.grid
    radii = dyadic_radii(grid, alpha) if radii is None else list(radii)
    if not radii:
        raise ValueError("empty radii set")
    a = _abs_values(f)
    out = np.zeros(grid.shape)
    for r in radii:
        kt, rows, count = footprint(grid, r, alpha)
        avg = _cyl_reduce(a, grid, kt, rows, "sum") / count
        np.maximum(out, _cyl_reduce(avg, grid, kt, rows, "max"), out=out)
    return SpaceTimeField(grid, out)


def m_alpha_sup(f, alpha, radii=None):
    """sup of M^alpha f; radii whose mass bound cannot beat the best are skipped."""
    grid = f.grid
    radii = dyadic_radii(grid, alpha) if radii is None else list(radii)
    if not radii:
        raise ValueError("empty radii set")
    a = _abs_values(f)
    total = a.sum()
    best = 0.0
    for r in radii:
        kt, rows, count = footprint(grid, r, alpha)
        if total / count <= best:
            continue
        best = max(best, float((_cyl_reduce(a, grid, kt, rows, "sum") / count).max()))
    return best


def superlevel(f, alpha, lam, radii=None):
    """Node mask of {M^alpha f > lam}."""
    grid = f.grid
    radii = dyadic_radii(grid, alpha) if radii is None else list(radii)
    if not radii:
        raise ValueError("empty radii set")
    a = _abs_values(f)
    total = a.sum()
    out = np.zeros(grid.shape, dtype=bool)
    for r in radii:
        kt, rows, count = footprint(grid, r, alpha)
        if total / count <= lam:
            continue
        hot = (_cyl_reduce(a, grid, kt, rows, "sum") / count > lam).astype(np.uint8)
        if hot.any():
            out |= _cyl_reduce(hot, grid, kt, rows, "max").astype(bool)
    return out


def sharp_mq(a, Q):
    """Mean oscillation |a - <a>_Q| / r over Q clipped to the grid."""
    grid = a.grid
    lo, hi = Q.index_box(grid)
    src, dst = _clip(grid, lo, hi)
    mask = Q.box_mask(grid, lo, hi)[src]
    if not mask.any():
        raise ValueError("cylinder lies outside the grid")
    v = a.values[dst][mask]
    if v.ndim == 1:
        dev = np.abs(v - v.mean())
    else:
        dev = np.linalg.norm(v - v.mean(axis=0), axis=-1)
    return float(dev.mean() / Q.r)


def _centres(grid, stride):
    axes = [np.arange(0, n, stride) for n in grid.shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.m + 1)


def sharp_alpha(a, alpha, radii=None, stride=1):
    """sup of the sharp averages over cylinders centred on every ``stride``-th node."""
    grid = a.grid
    radii = dyadic_radii(grid, alpha) if radii is None else list(radii)
    if not radii:
        raise ValueError("empty radii set")
    best = 0.0
    for c in _centres(grid, stride):
        for r in radii:
            best = max(best, sharp_mq(a, ParabolicCylinder.at_node(grid, c, r, alpha)))
    return best


# -- N_Q ----------------------------------------------------------------------

_SCALES = (1.0, 0.75, 0.5)
_OFFSETS = ((0.0, 0.0), (0.25, 0.0), (-0.25, 0.0), (0.0, 0.25), (0.0, -0.25))


def _bump(u):
    return np.clip(1.0 - u * u, 0.0, None) ** 2


def _local(grid, Q):
    lo, hi = Q.index_box(grid, margin=1)
    lo_c = [max(l, 0) for l in lo]
    hi_c = [min(h, n - 1) for h, n in zip(hi, grid.shape)]
    sl = tuple(slice(l, h + 1) for l, h in zip(lo_c, hi_c))
    inside = Q.box_mask(grid, lo_c, hi_c)
    return sl, lo_c, hi_c, inside


def test_family(grid, Q):
    """Normalized tensor bumps vanishing on the outer node layer of Q.

    Returns (slices, list of arrays) on the local node box.  Each member has
    discrete norm |xi|_inf + r |grad xi|_inf + alpha r^2 |D_t^+ xi|_inf = 1.
    """
    sl, lo, hi, inside = _local(grid, Q)
    cross = ndimage.generate_binary_structure(grid.m + 1, 1)
    core = ndimage.binary_erosion(inside, structure=cross, border_value=0)
    t = grid.t_start + grid.tau * np.arange(lo[0], hi[0] + 1)
    xs = [grid.x_start[i] + grid.h * np.arange(lo[i + 1], hi[i + 1] + 1) for i in range(grid.m)]
    T = Q.half_time
    members = []
    if not core.any():
        return sl, members
    for s in _SCALES:
        for ot, ox in _OFFSETS:
            xi = _bump((t - Q.t - ot * T) / (s * T)).reshape((-1,) + (1,) * grid.m)
            for i in range(grid.m):
                shift = ox * Q.r if i == 0 else 0.0
                shp = [1] * (grid.m + 1)
                shp[i + 1] = -1
                xi = xi * _bump((xs[i] - Q.x[i] - shift) / (s * Q.r)).reshape(shp)
            xi = xi * core
            norm = _ftest_norm(xi, grid, Q)
            if norm > 0:
                members.append(xi / norm)
    return sl, members


def _dt_forward(v, tau):
    out = np.empty_like(v)
    out[:-1] = (v[1:] - v[:-1]) / tau
    out[-1] = -v[-1] / tau
    return out


def _ftest_norm(xi, grid, Q):
    g = gradient_array(xi, grid.h)
    return (np.abs(xi).max() + Q.r * np.linalg.norm(g, axis=-1).max()
            + Q.half_time * np.abs(_dt_forward(xi, grid.tau)).max())


def n_q(w, G, Q, mode="flux-bound"):
    """N_Q(dt w): flux bound mean |G| over Q, or test-family lower bound."""
    if mode == "flux-bound":
        if G is None:
            raise ValueError("flux-bound mode needs G")
        return m_q(G, Q)
    if mode != "test-family":
        raise ValueError(f"unknown mode {mode!r}")
    grid = w.grid
    sl, members = test_family(grid, Q)
    if not members:
        return 0.0
    wl = w.values[sl]
    count = lattice_count(grid, Q)
    best = 0.0
    for xi in members:
        best = max(best, abs(float(np.sum(wl * _dt_forward(xi, grid.tau)))))
    return Q.r * best / count


def n_alpha(w, G, alpha, mode="flux-bound", radii=None, stride=1):
    """sup of N_Q over quantized cylinders."""
    grid = w.grid
    if mode == "flux-bound":
        if G is None:
            raise ValueError("flux-bound mode needs G")
        return m_alpha_sup(G, alpha, radii)
    radii = dyadic_radii(grid, alpha) if radii is None else list(radii)
    best = 0.0
    for c in _centres(grid, stride):
        for r in radii:
            best = max(best, n_q(w, G, ParabolicCylinder.at_node(grid, c, r, alpha), mode))
    return best
