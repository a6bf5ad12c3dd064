"""Parabolic Lipschitz truncation of a scalar w with dt w = div G.

The fields are first extended (zero outside the box and before -t0, w even
and G odd across t = 0).  On the extended grid

    O = {M^alpha(grad w) > lam} u {alpha M^alpha(G) > lam},
    w_lam = w - sum_j rho_j (w - w_j),

with {rho_j} the Whitney partition of unity of O and w_j the rho_j-mean of w
when 3/4 Q_j lies in (-t0, t0) x Omega (closed), else 0.
"""
from dataclasses import dataclass, field

import numpy as np

from . import maximal, whitney
from .grid import (SpaceTimeField, base_slices, extend, gradient_array, restrict,
                   weights)
from .maximal import ParabolicCylinder

__all__ = ["TruncationParams", "TruncationResult", "bad_set", "local_averages",
           "truncate", "verify_properties", "stability_ratio", "ibp_residual",
           "holder_quotient"]


@dataclass(frozen=True)
class TruncationParams:
    lam: float
    alpha: float
    radii: tuple = None
    phi: object = None

    def __post_init__(self):
        for name in ("lam", "alpha"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive")


@dataclass
class TruncationResult:
    params: TruncationParams
    w_ext: SpaceTimeField
    G_ext: SpaceTimeField
    bad: np.ndarray              # on the extended grid
    wlam_ext: SpaceTimeField
    cover: object
    wj: np.ndarray
    cases: np.ndarray            # 1 inside, 2 time-straddling, 3 near the lateral boundary
    flags: dict = field(default_factory=dict)

    @property
    def wlam(self):
        return restrict(self.wlam_ext)

    @property
    def bad_base(self):
        return self.bad[base_slices(self.w_ext)]


def _grad_norm(values, h):
    return np.linalg.norm(gradient_array(values, h), axis=-1)


def bad_set(w_ext, G_ext, params):
    """Node mask of the bad set on the extended grid (strict '>')."""
    grid = w_ext.grid
    radii = params.radii
    gw = SpaceTimeField(grid, _grad_norm(w_ext.values, grid.h))
    O = maximal.superlevel(gw, params.alpha, params.lam, radii)
    O |= maximal.superlevel(G_ext, params.alpha, params.lam / params.alpha, radii)
    return O


def case_tags(cover, base):
    """1: 3/4 Q_j inside (-t0, t0) x Omega; 2: not, but 4/5 Q_j inside R x Omega; 3: otherwise."""
    grid = cover.grid
    if len(cover) == 0:
        return np.zeros(0, dtype=int)
    c = cover.centers
    r = cover.radii
    tol = 1e-12 * max(base.t0, max(base.box), 1.0)
    t = grid.t_start + grid.tau * c[:, 0]
    half = cover.alpha * (0.75 * r) ** 2
    inside_t = (t - half >= -base.t0 - tol) & (t + half <= base.t0 + tol)

    def inside_x(rr):
        ok = np.ones(len(r), dtype=bool)
        for i in range(grid.m):
            x = grid.x_start[i] + grid.h * c[:, i + 1]
            ok &= (x - rr >= -tol) & (x + rr <= base.box[i] + tol)
        return ok

    return np.where(inside_t & inside_x(0.75 * r), 1, np.where(inside_x(0.8 * r), 2, 3))


def local_averages(w_ext, cover):
    """(w_j, case tags) for every cylinder of the cover."""
    grid = w_ext.grid
    cases = case_tags(cover, w_ext.meta["base"])
    wj = np.zeros(len(cover))
    if len(cover) == 0:
        return wj, cases
    W = weights(grid)
    point = cover.is_point if cover.is_point is not None else np.zeros(len(cover), dtype=bool)
    for j in np.flatnonzero((cases == 1) & ~point):
        sl = cover.boxes[j]
        wr = W[sl] * cover.weights[j]
        wj[j] = float(np.sum(wr * w_ext.values[sl]) / wr.sum())
    pts = np.flatnonzero((cases == 1) & point)
    wj[pts] = w_ext.values[tuple(cover.centers[pts].T)]
    return wj, cases


_MAX_NODES = 20_000_000


def truncate(w, G, params, pad_t=None, pad_x=None, max_retries=4):
    """Lipschitz truncation of a scalar field given on the base grid.

    The padding is doubled while the bad set reaches the extended boundary.
    """
    if w.values.ndim != w.grid.m + 1:
        raise ValueError("truncation is implemented for scalar w")
    if G.values.ndim != G.grid.m + 2:
        G = G.with_values(G.values[..., None])
    for attempt in range(max_retries + 1):
        w_ext, G_ext = extend(w, G, pad_t, pad_x)
        if np.prod(w_ext.grid.shape) > _MAX_NODES:
            raise RuntimeError("extended grid too large; bad set does not fit the padding")
        O = bad_set(w_ext, G_ext, params)
        if not _touches(O):
            break
        pad_t = 2 * w_ext.meta["pad_t"]
        pad_x = 2 * w_ext.meta["pad_x"]
    else:
        raise RuntimeError("bad set reaches the extended grid boundary; increase padding")
    cov = whitney.cover(O, w_ext.grid, params.alpha)
    wj, cases = local_averages(w_ext, cov)
    wl = w_ext.values.copy()
    point = cov.is_point if cov.is_point is not None else np.zeros(len(cov), dtype=bool)
    for j in np.flatnonzero(~point):
        sl = cov.boxes[j]
        wl[sl] -= cov.weights[j] * (w_ext.values[sl] - wj[j])
    pts = np.flatnonzero(point)
    if pts.size:
        # point supports are pairwise distinct nodes
        pc = tuple(cov.centers[pts].T)
        rho = np.array([cov.weights[j].item() for j in pts])
        wl[pc] -= rho * (w_ext.values[pc] - wj[pts])
    flags = {"degenerate": bool(O[base_slices(w_ext)].all()), "empty": not O.any()}
    return TruncationResult(params, w_ext, G_ext, O, w_ext.with_values(wl), cov, wj, cases, flags)


def _touches(O):
    for a in range(O.ndim):
        ax = np.moveaxis(O, a, 0)
        if ax[0].any() or ax[-1].any():
            return True
    return False


# -- verification ---------------------------------------------------------------

def holder_quotient(res, n_pairs=10_000, seed=0):
    """max |w_lam(z1) - w_lam(z2)| / (lam d_alpha(z1, z2)) over random node pairs.

    The second node is the first shifted by a random offset whose size is
    log-uniform between one node and the grid extent, so that near and far
    pairs are both sampled.
    """
    wl = res.wlam
    g = wl.grid
    lam, alpha = res.params.lam, res.params.alpha
    rng = np.random.default_rng(seed)
    shape = np.array(g.shape)
    z1 = np.stack([rng.integers(0, n, n_pairs) for n in shape], axis=1)
    scale = np.exp(rng.uniform(0, np.log(shape.max()), n_pairs))
    off = np.rint(rng.uniform(-1, 1, (n_pairs, len(shape))) * scale[:, None]).astype(int)
    z2 = np.clip(z1 + off, 0, shape - 1)
    keep = np.any(z1 != z2, axis=1)
    z1, z2 = z1[keep], z2[keep]
    dt = np.abs(z1[:, 0] - z2[:, 0]) * g.tau
    dx = np.linalg.norm((z1[:, 1:] - z2[:, 1:]) * g.h, axis=1)
    d = np.maximum(np.sqrt(dt / alpha), dx)
    v = wl.values
    diff = np.abs(v[tuple(z1.T)] - v[tuple(z2.T)])
    return float((diff / (lam * d)).max()) if diff.size else 0.0


def _flux_tiers(res, n_family=200, seed=0):
    """(flux tier sup over good cylinders, family tier sup, violations)."""
    grid = res.w_ext.grid
    lam, alpha = res.params.lam, res.params.alpha
    radii = res.params.radii or maximal.dyadic_radii(grid, alpha)
    Gabs = res.G_ext.norm()
    Of = res.bad.astype(float)
    flux = 0.0
    goods = []
    for r in radii:
        kt, rows, count = maximal.footprint(grid, r, alpha)
        avg = maximal._cyl_reduce(Gabs, grid, kt, rows, "sum") / count
        good = maximal._cyl_reduce(Of, grid, kt, rows, "sum") == 0
        if good.any():
            flux = max(flux, float(avg[good].max()))
            goods.append((r, np.argwhere(good)))
    rng = np.random.default_rng(seed)
    fam = 0.0
    violations = 0
    # family tier: cylinders up to a quarter of the spatial extent
    small = [r for r in radii if r <= 0.25 * max(grid.n_space) * grid.h] or radii[:1]
    per_r = max(1, n_family // len(small))
    for r in small:
        centres = np.stack([rng.integers(0, n, per_r) for n in grid.shape], axis=1)
        for c in centres:
            Q = ParabolicCylinder.at_node(grid, c, r, alpha)
            fam = max(fam, maximal.n_q(res.wlam_ext, None, Q, "test-family"))
    for r, idx in goods:
        if r not in small:
            continue
        pick = idx[rng.integers(0, len(idx), min(len(idx), per_r))]
        for c in pick:
            Q = ParabolicCylinder.at_node(grid, c, r, alpha)
            t = maximal.n_q(res.wlam_ext, None, Q, "test-family")
            f = maximal.n_q(None, res.G_ext, Q, "flux-bound")
            violations += int(t > f * (1 + 1e-10) + 1e-300)
    return alpha * flux / lam, alpha * fam / lam, violations


def _surrogates(res):
    """max_j mean_{3/4 Q_j}|w - w_j| / (r_j lam) and max_k sum_{A_k}|w_j - w_k| / (r_j lam)."""
    cov, grid = res.cover, res.w_ext.grid
    lam = res.params.lam
    if len(cov) == 0:
        return 0.0, 0.0
    point = cov.is_point if cov.is_point is not None else np.zeros(len(cov), dtype=bool)
    s1 = 0.0
    for j in np.flatnonzero(~point):
        Q = cov.cylinder(j, 0.75)
        lo, hi = Q.index_box(grid)
        src, dst = maximal._clip(grid, lo, hi)
        mk = Q.box_mask(grid, lo, hi)
        vals = np.abs(res.w_ext.values[dst][mk[src]] - res.wj[j])
        s1 = max(s1, float(vals.sum() / mk.sum() / (cov.radii[j] * lam)))
    pts = np.flatnonzero(point)
    if pts.size:
        v = np.abs(res.w_ext.values[tuple(cov.centers[pts].T)] - res.wj[pts]) / (cov.radii[pts] * lam)
        s1 = max(s1, float(v.max()))
    A = cov.adjacency
    rowk = np.repeat(np.arange(len(cov)), np.diff(A.indptr))
    terms = np.abs(res.wj[A.indices] - res.wj[rowk]) / cov.radii[A.indices] / lam
    s2 = float(np.bincount(rowk, weights=terms, minlength=len(cov)).max())
    return s1, s2


def stability_ratio(res, phi=None):
    """int phi(|grad(w_lam - w)|) / (int_O phi(|grad w|) + phi(lam)|O|) on the base grid.

    phi = None gives the L^1 version.  Returns (ratio, vacuous); vacuous means
    an empty bad set, in which case the ratio is reported as 0.
    """
    lam = res.params.lam
    sl = base_slices(res.w_ext)
    base = res.w_ext.meta["base"]
    w = res.w_ext.values[sl]
    Ob = res.bad[sl]
    W = weights(base)
    gdiff = _grad_norm(res.wlam_ext.values[sl] - w, base.h)
    gw = _grad_norm(w, base.h)
    measO = float((W * Ob).sum())
    if phi is None:
        num = float((W * gdiff).sum())
        den = float((W * gw * Ob).sum()) + lam * measO
    else:
        num = float((W * phi.phi(gdiff)).sum())
        den = float((W * phi.phi(gw) * Ob).sum()) + float(phi.phi(lam)) * measO
    return (num / den if den > 0 else 0.0), den == 0


def verify_properties(res, phi=None, n_pairs=10_000, n_family=200, seed=0, tiers=True):
    """Measured constants of properties (a)-(e) and the stability ratios."""
    lam, alpha = res.params.lam, res.params.alpha
    phi = phi or res.params.phi
    sl = base_slices(res.w_ext)
    base = res.w_ext.meta["base"]
    w = res.w_ext.values[sl]
    wl = res.wlam_ext.values[sl]
    Ob = res.bad[sl]
    good = ~Ob
    scale = max(np.abs(w).max(), 1e-300)
    a_err = float(np.abs(wl[good] - w[good]).max() / scale) if good.any() else 0.0
    report = {"lambda": lam, "alpha": alpha, "bad_fraction": float(Ob.mean()),
              "cylinders": len(res.cover), "prop_a_exact": a_err == 0.0, "prop_a_err": a_err}
    gl = SpaceTimeField(res.wlam_ext.grid, _grad_norm(res.wlam_ext.values, base.h))
    report["c_b"] = maximal.m_alpha_sup(gl, alpha, res.params.radii) / lam
    for name, f in (("c_c", phi), ("c_c_l1", None)):
        report[name], vacuous = stability_ratio(res, f)
        if vacuous:
            report[name + "_vacuous"] = True
    if tiers:
        flux, fam, viol = _flux_tiers(res, n_family, seed)
        report.update(c_d_flux=flux, c_d_family=fam, nq_violations=viol)
    report["c_e"] = holder_quotient(res, n_pairs, seed)
    s1, s2 = _surrogates(res)
    report.update(c_w_wj=s1, c_wj_wk=s2, overlap_max=res.cover.overlap_max,
                  cases={str(c): int((res.cases == c).sum()) for c in (1, 2, 3)})
    return report


def ibp_residual(res, eta=None, deta=None):
    """(|LHS - RHS|, energy scale) for the integration-by-parts identity.

    LHS = -<G, grad(w_lam eta)>,
    RHS = 1/2 int (w_lam^2 - 2 w w_lam) eta' + int_O (dt w_lam)(w_lam - w) eta,
    with dt w_lam the backward difference quotient.  ``eta`` defaults to
    (t+ - t) / (t+ - t-) on J = (-t0, 0); it must vanish at t+ = 0.
    """
    base = res.w_ext.meta["base"]
    t = base.times()
    if eta is None:
        eta = lambda s: -s / base.t0
        deta = lambda s: np.full_like(s, -1.0 / base.t0)
    e = np.asarray(eta(t), dtype=float)
    if abs(e[-1]) > 1e-12 * max(np.abs(e).max(), 1.0):
        raise ValueError("eta must vanish at t+")
    de = np.asarray(deta(t), dtype=float)
    sh = (-1,) + (1,) * base.m
    e, de = e.reshape(sh), de.reshape(sh)
    sl = base_slices(res.w_ext)
    w = res.w_ext.values[sl]
    G = res.G_ext.values[sl]
    wl = res.wlam_ext.values[sl]
    W = weights(base)
    lhs = -float(np.sum(W[..., None] * G * gradient_array(wl * e, base.h)))
    # predecessor of the first base node is the zero extension
    prev = res.wlam_ext.values[(slice(sl[0].start - 1, sl[0].stop - 1),) + sl[1:]]
    dtl = (wl - prev) / base.tau
    Ob = res.bad[sl]
    rhs = 0.5 * float(np.sum(W * (wl ** 2 - 2 * w * wl) * de))
    rhs += float(np.sum(W * Ob * dtl * (wl - w) * e))
    energy = float(np.sum(W * wl ** 2 * np.abs(de)) + np.sum(W * np.abs(w * wl) * np.abs(de))) + abs(lhs)
    return abs(lhs - rhs), energy
