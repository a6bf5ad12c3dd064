"""Space-time fields on uniform grids over J x Omega.

Layout: values have shape ``(n_t, n_1, ..., n_m)`` for scalar fields and
``(n_t, n_1, ..., n_m, m)`` for vector fields.  Time nodes are
``t_start + k * tau``; space nodes ``x_start + i * h``.  The base grid has
``t_start = -t0`` (so the last node is t = 0) and ``x_start = 0``, and the
box Omega = prod [0, L_i] with L_i = (n_i - 1) h.

The discrete weak equation dt w = div G is read with a backward difference
in time and the divergence :func:`divergence` (the exact negative adjoint of
:func:`gradient` under the trapezoidal inner product), with w = 0 before the
first time node:

    (w[k] - w[k-1]) / tau = div G[k].
"""
import struct
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "GridSpec",
    "SpaceTimeField",
    "base_grid",
    "extend",
    "restrict",
    "check_boundary",
    "as_vector",
    "gradient",
    "divergence",
    "time_derivative",
    "weak_residual",
    "weights",
    "weighted_mean",
    "modular_integral",
    "write_ptf",
    "read_ptf",
    "read_csv",
    "flux_pair",
    "random_pair",
    "preset_pair",
]


@dataclass(frozen=True)
class GridSpec:
    m: int
    n_space: tuple
    n_t: int
    h: float
    tau: float
    t0: float
    t_start: float = None
    x_start: tuple = None
    box: tuple = None
    alpha: float = None

    def __post_init__(self):
        if self.m not in (1, 2):
            raise ValueError("only m = 1 or m = 2 is supported")
        if len(self.n_space) != self.m:
            raise ValueError("n_space must have m entries")
        if min(self.n_space) < 4 or self.n_t < 4:
            raise ValueError("need at least 4 nodes per axis")
        if not (self.h > 0 and self.tau > 0 and self.t0 > 0):
            raise ValueError("h, tau, t0 must be positive")
        if self.t_start is None:
            object.__setattr__(self, "t_start", -self.t0)
        if self.x_start is None:
            object.__setattr__(self, "x_start", (0.0,) * self.m)
        if self.box is None:
            object.__setattr__(self, "box", tuple((n - 1) * self.h for n in self.n_space))

    @property
    def shape(self):
        return (self.n_t,) + tuple(self.n_space)

    @property
    def cell(self):
        return self.tau * self.h ** self.m

    def times(self):
        return self.t_start + self.tau * np.arange(self.n_t)

    def coords(self, axis):
        return self.x_start[axis] + self.h * np.arange(self.n_space[axis])

    def mesh(self):
        """Broadcastable (t, x_1, ..., x_m) coordinate arrays."""
        out = [self.times().reshape((-1,) + (1,) * self.m)]
        for i in range(self.m):
            shp = [1] * (self.m + 1)
            shp[i + 1] = -1
            out.append(self.coords(i).reshape(shp))
        return out

    def time_index(self, t):
        return int(round((t - self.t_start) / self.tau))

    def space_index(self, axis, x):
        return int(round((x - self.x_start[axis]) / self.h))

    def omega_mask(self, closed=True):
        """Nodes whose spatial part lies in Omega (closed box or open box)."""
        tol = 1e-9 * self.h
        mask = np.ones(self.n_space, dtype=bool)
        for i in range(self.m):
            x = self.coords(i)
            if closed:
                inside = (x >= -tol) & (x <= self.box[i] + tol)
            else:
                inside = (x > tol) & (x < self.box[i] - tol)
            shp = [1] * self.m
            shp[i] = -1
            mask = mask & inside.reshape(shp)
        return mask

    def time_mask(self, lo, hi):
        t = self.times()
        tol = 1e-9 * self.tau
        return (t >= lo - tol) & (t <= hi + tol)


def base_grid(m, n_space, n_t, h, tau, alpha=None):
    n_space = tuple(int(n) for n in np.atleast_1d(n_space))
    if len(n_space) == 1 and m == 2:
        n_space = n_space * 2
    return GridSpec(m=m, n_space=n_space, n_t=int(n_t), h=float(h), tau=float(tau),
                    t0=(int(n_t) - 1) * float(tau), alpha=alpha)


@dataclass
class SpaceTimeField:
    grid: GridSpec
    values: np.ndarray
    extension: str = "none"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shp = self.grid.shape
        if self.values.shape not in (shp, shp + (self.grid.m,)):
            raise ValueError(f"values of shape {self.values.shape} do not fit grid {shp}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def rank(self):
        return 1 if self.values.ndim == self.grid.m + 1 else self.grid.m

    def norm(self):
        """Pointwise |f| as a plain array."""
        if self.rank == 1 and self.values.ndim == self.grid.m + 1:
            return np.abs(self.values)
        return np.linalg.norm(self.values, axis=-1)

    def with_values(self, values):
        return SpaceTimeField(self.grid, values, self.extension, dict(self.meta))


# -- difference operators ---------------------------------------------------

def _diff_axis(f, axis, h):
    f = np.moveaxis(f, axis, 0)
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
    out[0] = (f[1] - f[0]) / h
    out[-1] = (f[-1] - f[-2]) / h
    return np.moveaxis(out, 0, axis)


def _trap_1d(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def _div_axis(g, axis, h):
    # -W^{-1} D^T W g along one axis; other axes' weights cancel
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0]
    wt = _trap_1d(n, h).reshape((-1,) + (1,) * (g.ndim - 1))
    u = wt * g
    dt = np.zeros_like(g)
    dt[0] -= u[0] / h
    dt[1] += u[0] / h
    dt[:-2] -= u[1:-1] / (2 * h)
    dt[2:] += u[1:-1] / (2 * h)
    dt[-2] -= u[-1] / h
    dt[-1] += u[-1] / h
    return np.moveaxis(-dt / wt, 0, axis)


def as_vector(f):
    """View an m = 1 scalar field as a 1-vector field (no-op otherwise)."""
    if f.values.ndim == f.grid.m + 1 and f.grid.m == 1:
        return f.with_values(f.values[..., None])
    return f


def gradient(f):
    """Spatial gradient: centred differences, one-sided at box faces."""
    if isinstance(f, SpaceTimeField):
        if f.values.ndim != f.grid.m + 1:
            raise ValueError("gradient needs a scalar field")
        return f.with_values(gradient_array(f.values, f.grid.h))
    raise TypeError("expected SpaceTimeField")


def gradient_array(values, h):
    m = values.ndim - 1
    return np.stack([_diff_axis(values, i + 1, h) for i in range(m)], axis=-1)


def divergence(G):
    """Discrete divergence, the negative trapezoidal adjoint of :func:`gradient`."""
    if G.values.ndim != G.grid.m + 2:
        raise ValueError("divergence needs a vector field")
    return SpaceTimeField(G.grid, divergence_array(G.values, G.grid.h), G.extension)


def divergence_array(values, h):
    m = values.shape[-1]
    return sum(_div_axis(values[..., i], i + 1, h) for i in range(m))


def time_derivative(f, kind="backward"):
    """Backward (k vs k-1, zero before the first node) or forward difference."""
    v = f.values if isinstance(f, SpaceTimeField) else f
    tau = f.grid.tau
    out = np.empty_like(v)
    if kind == "backward":
        out[0] = v[0] / tau
        out[1:] = (v[1:] - v[:-1]) / tau
    else:
        out[:-1] = (v[1:] - v[:-1]) / tau
        out[-1] = -v[-1] / tau
    return f.with_values(out) if isinstance(f, SpaceTimeField) else out


def weak_residual(w, G):
    """Nodewise residual of the discrete equation dt w - div G."""
    if w.grid != G.grid:
        raise ValueError("w and G live on different grids")
    return w.with_values(time_derivative(w).values - divergence(G).values)


# -- quadrature ---------------------------------------------------------------

def weights(grid):
    """Trapezoidal space-time weights (sum = |J x Omega| on a base grid)."""
    w = _trap_1d(grid.n_t, grid.tau)
    for n in grid.n_space:
        w = np.multiply.outer(w, _trap_1d(n, grid.h))
    return w


def weighted_mean(f, rho):
    """<f>_rho = (1/||rho||_1) int f rho with trapezoidal weights."""
    W = weights(f.grid)
    r = rho.values if isinstance(rho, SpaceTimeField) else np.asarray(rho, dtype=float)
    if np.any(r < 0):
        raise ValueError("weight must be nonnegative")
    wr = W * r
    total = wr.sum()
    if not total > 0:
        raise ValueError("degenerate weight")
    # shift by a reference value so constants come back exactly
    idx = np.unravel_index(np.argmax(wr), wr.shape)
    ref = f.values[idx]
    if f.values.ndim == f.grid.m + 2:
        return ref + np.tensordot(wr, f.values - ref, axes=wr.ndim) / total
    return float(ref + np.sum(wr * (f.values - ref)) / total)


def modular_integral(f, phi, mask=None):
    """int phi(|f|) dz by the trapezoidal rule (optionally over a node mask)."""
    vals = phi.phi(f.norm()) * weights(f.grid)
    if mask is not None:
        vals = vals * mask
    return float(vals.sum())


# -- extension ----------------------------------------------------------------

def extend(w, G, pad_t=None, pad_x=None):
    """Zero / reflection extension to an enlarged grid.

    In time: zero before -t0, w even and G odd across t = 0 (so that the
    discrete equation keeps holding), zero after t0.  In space: zero outside
    Omega.  ``pad_t`` / ``pad_x`` are the numbers of extra zero nodes added on
    each side; defaults are t0 in time and a quarter of the box in space.
    """
    if w.grid != G.grid:
        raise ValueError("w and G live on different grids")
    g = w.grid
    if g.t_start != -g.t0:
        raise ValueError("extend expects fields on a base grid")
    nt = g.n_t
    pad_t = max(2, nt - 1) if pad_t is None else int(pad_t)
    pad_x = max(2, min(g.n_space) // 4) if pad_x is None else int(pad_x)
    c = nt - 1  # index of t = 0

    def time_ext(v, odd):
        ext = np.zeros((2 * c + 1,) + v.shape[1:])
        ext[: c + 1] = v
        if odd:
            # G_ext[c + j] = -G[c - j + 1]
            ext[c + 1:] = -v[c:0:-1]
        else:
            ext[c + 1:] = v[c - 1::-1]
        return ext

    wv = time_ext(w.values, odd=False)
    Gv = time_ext(G.values, odd=True)
    sp = [(pad_t, pad_t)] + [(pad_x, pad_x)] * g.m
    wv = np.pad(wv, sp + [(0, 0)] * (wv.ndim - g.m - 1))
    Gv = np.pad(Gv, sp + [(0, 0)] * (Gv.ndim - g.m - 1))
    eg = replace(g, n_space=tuple(n + 2 * pad_x for n in g.n_space), n_t=2 * c + 1 + 2 * pad_t,
                 t_start=-g.t0 - pad_t * g.tau, x_start=tuple(-pad_x * g.h for _ in range(g.m)))
    meta = {"pad_t": pad_t, "pad_x": pad_x, "base": g}
    return (SpaceTimeField(eg, wv, "zero-then-reflect", dict(meta)),
            SpaceTimeField(eg, Gv, "zero-then-reflect", dict(meta)))


def boundary_max(f):
    """max |f| over nodes on the lateral boundary of the box."""
    a = f.norm()
    faces = []
    for i in range(f.grid.m):
        ax = np.moveaxis(a, i + 1, 0)
        faces += [np.abs(ax[0]).max(), np.abs(ax[-1]).max()]
    return float(max(faces))


def check_boundary(f, tol=0.0):
    """Zero lateral boundary values stand in for the W^{1,1}_0 condition."""
    b = boundary_max(f)
    if b > tol:
        raise ValueError(f"field does not vanish on the box faces (max {b:.3g})")


def restrict(f):
    """Restrict an extended field back to its base grid J x Omega."""
    base = f.meta["base"]
    pt, px = f.meta["pad_t"], f.meta["pad_x"]
    sl = (slice(pt, pt + base.n_t),) + tuple(slice(px, px + n) for n in base.n_space)
    return SpaceTimeField(base, f.values[sl].copy())


def base_slices(f):
    base = f.meta["base"]
    pt, px = f.meta["pad_t"], f.meta["pad_x"]
    return (slice(pt, pt + base.n_t),) + tuple(slice(px, px + n) for n in base.n_space)


# -- file formats -------------------------------------------------------------

_MAGIC = b"PTF1"


def write_ptf(path, f):
    g = f.grid
    rank = g.m if f.values.ndim == g.m + 2 else 1
    head = _MAGIC + struct.pack("<II", rank, g.m) + struct.pack("<I", g.n_t)
    head += struct.pack("<" + "I" * g.m, *g.n_space)
    head += struct.pack("<ddd", g.h, g.tau, g.t0)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_ptf(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a PTF1 file")
    rank, m = struct.unpack_from("<II", data, 4)
    (n_t,) = struct.unpack_from("<I", data, 12)
    n_space = struct.unpack_from("<" + "I" * m, data, 16)
    off = 16 + 4 * m
    h, tau, t0 = struct.unpack_from("<ddd", data, off)
    off += 24
    if rank not in (1, m):
        raise ValueError(f"{path}: rank {rank} is neither scalar nor an {m}-vector")
    # for m = 1 scalar and vector files coincide; they load as scalars
    shape = (n_t,) + tuple(n_space) + ((rank,) if rank > 1 else ())
    count = int(np.prod(shape))
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
    if len(data) != off + 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    grid = GridSpec(m=m, n_space=tuple(n_space), n_t=n_t, h=h, tau=tau, t0=t0)
    return SpaceTimeField(grid, vals.copy())


def read_csv(path, h, tau):
    """m = 1 scalar field from CSV: one row per time node, one column per space node."""
    vals = np.loadtxt(path, delimiter=",", ndmin=2)
    grid = base_grid(1, (vals.shape[1],), vals.shape[0], h, tau)
    return SpaceTimeField(grid, vals)


# -- generators ---------------------------------------------------------------

def _bump(r2):
    return np.clip(1.0 - r2, 0.0, None) ** 3


def flux_pair(grid, sources):
    """(w, G) with the discrete equation satisfied exactly.

    ``sources`` is a list of ``(profile, amplitude, center, width)``: each
    contributes G = (a(t_k) - a(t_{k-1}))/tau * amplitude * bump(x), where the
    profile ``a`` (a callable of time) vanishes at -t0 and ``amplitude`` is an
    m-vector.  w is then the time integral of div G, so w = 0 on the initial
    slice region before any flux and near the box faces.
    """
    mesh = grid.mesh()
    t = grid.times()
    G = np.zeros(grid.shape + (grid.m,))
    for profile, amp, center, width in sources:
        a = profile(t)
        a = a - a[0]
        da = np.zeros_like(a)
        da[1:] = (a[1:] - a[:-1]) / grid.tau
        r2 = sum((mesh[i + 1] - center[i]) ** 2 for i in range(grid.m)) / width ** 2
        b = _bump(r2)[0]
        G += da.reshape((-1,) + (1,) * grid.m + (1,)) * (b[..., None] * np.asarray(amp, dtype=float))
    Gf = SpaceTimeField(grid, G)
    w = np.cumsum(grid.tau * divergence(Gf).values, axis=0)
    return SpaceTimeField(grid, w), Gf


def _profile(freq, phase):
    def a(t):
        return np.sin(freq * t + phase)
    return a


def random_pair(grid, seed, n_sources=6, width_range=(0.08, 0.3), amp_scale=1.0):
    """Seeded smooth random (w, G); geometry is given in units of the box so
    the same seed describes the same continuous field on any resolution."""
    rng = np.random.default_rng(seed)
    L = np.array(grid.box)
    sources = []
    for _ in range(n_sources):
        width = rng.uniform(*width_range) * L.min()
        margin = width + 4 * grid.h
        center = np.array([rng.uniform(margin, Li - margin) if Li > 2 * margin else Li / 2 for Li in L])
        amp = rng.normal(size=grid.m) * amp_scale * width
        freq = rng.uniform(0.5, 2.0) * np.pi / grid.t0
        phase = rng.uniform(0, 2 * np.pi)
        sources.append((_profile(freq, phase), amp, center, width))
    return flux_pair(grid, sources)


def preset_pair(grid, name, seed=0):
    L = np.array(grid.box)
    mid = L / 2
    ramp = _profile(0.5 * np.pi / grid.t0, 0.5 * np.pi)
    if name == "zero":
        return (SpaceTimeField(grid, np.zeros(grid.shape)),
                SpaceTimeField(grid, np.zeros(grid.shape + (grid.m,))))
    if name == "smooth":
        return flux_pair(grid, [(ramp, np.full(grid.m, 0.1 * L.min()), mid, 0.3 * L.min())])
    if name == "spike":
        w0 = 0.3 * L.min()
        ws = max(0.02 * L.min(), 3 * grid.h)
        return flux_pair(grid, [(ramp, np.full(grid.m, 0.1 * L.min()), mid, w0),
                                (ramp, np.full(grid.m, 0.05 * ws), mid + 0.15 * L, ws)])
    if name == "random":
        return random_pair(grid, seed)
    raise ValueError(f"unknown preset {name!r}")
