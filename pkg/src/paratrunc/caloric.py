"""phi-caloric comparison solver and the caloric approximation experiment.

The comparison function h solves dt h = div A(grad h) with h = u on the
parabolic boundary, discretised with the grid's own gradient and divergence
(backward Euler in time).  Each step minimises the convex energy

    sum_i W_i [ |v - h_prev|^2 / (2 tau) + phi_eps(|grad v|) ]

over the interior nodes, phi_eps(s) = phi(sqrt(s^2 + eps^2)), whose
Euler-Lagrange equation is exactly the discrete equation at interior nodes.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import linalg as splinalg

from . import maximal
from .grid import (SpaceTimeField, _trap_1d, divergence_array, gradient_array, weights)
from .orlicz import psi_from
from .truncation import TruncationParams, truncate

__all__ = ["CaloricProblem", "SolverConfig", "SolverError", "solve_phi_heat", "energy_check",
           "good_lambda_select", "defect", "defect_family", "approximation_experiment",
           "distances", "interpolation_check", "a_map", "v_map", "heat_problem", "bump_problem"]


@dataclass
class CaloricProblem:
    u: SpaceTimeField
    H: SpaceTimeField
    phi: object
    sigma: float = 0.5
    q: float = 1.0
    theta: float = 0.25
    enlarge: float = 1.0   # Q~ as a spatial enlargement factor in [1, 2]; 1 means Q~ = Q

    def __post_init__(self):
        if not np.all(np.isfinite(self.u.values)):
            raise ValueError("u must be finite")
        if not (0 < self.sigma < 1 and 0 < self.theta < 1):
            raise ValueError("sigma and theta must lie in (0, 1)")
        if not self.q >= 1:
            raise ValueError("q must be >= 1")
        if not 1 <= self.enlarge <= 2:
            raise ValueError("enlargement must lie in [1, 2]")
        if self.H.values.ndim == self.u.grid.m + 1:
            self.H = self.H.with_values(self.H.values[..., None])

    @property
    def grid(self):
        return self.u.grid


@dataclass(frozen=True)
class SolverConfig:
    eps_rel: float = 1e-6
    tol: float = 1e-10
    max_iter: int = 60
    lin_tol: float = 1e-12

    def __post_init__(self):
        if not (self.eps_rel > 0 and self.tol > 0 and self.lin_tol > 0 and self.max_iter > 0):
            raise ValueError("regularization and tolerances must be positive")


class SolverError(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(f"{msg}; residual history {['%.3g' % r for r in history]}")
        self.history = list(history)


def _vec(deriv, g):
    n = np.linalg.norm(g, axis=-1, keepdims=True)
    safe = np.where(n > 0, n, 1.0)
    return np.where(n > 0, deriv(n) * g / safe, 0.0)


def a_map(phi, g):
    """A(g) = phi'(|g|) g / |g|."""
    return _vec(phi.dphi, g)


def v_map(phi, g):
    """V(g) = psi'(|g|) g / |g| with psi'(t) = sqrt(phi'(t) t)."""
    return _vec(psi_from(phi).dphi, g)


# -- solver -------------------------------------------------------------------

def _diff_matrix(n, h):
    D = sparse.lil_matrix((n, n))
    D[0, 0], D[0, 1] = -1 / h, 1 / h
    D[n - 1, n - 2], D[n - 1, n - 1] = -1 / h, 1 / h
    for i in range(1, n - 1):
        D[i, i - 1], D[i, i + 1] = -0.5 / h, 0.5 / h
    return D.tocsr()


def _space_ops(grid):
    """Sparse gradient components, trapezoid weights and interior mask (flattened)."""
    ns = grid.n_space
    mats = []
    for i in range(grid.m):
        parts = [sparse.identity(n, format="csr") for n in ns]
        parts[i] = _diff_matrix(ns[i], grid.h)
        M = parts[0]
        for P in parts[1:]:
            M = sparse.kron(M, P, format="csr")
        mats.append(M)
    W = _trap_1d(ns[0], grid.h)
    for n in ns[1:]:
        W = np.multiply.outer(W, _trap_1d(n, grid.h))
    inner = np.zeros(ns, dtype=bool)
    inner[tuple(slice(1, -1) for _ in ns)] = True
    return mats, W.ravel(), inner.ravel()


class _Step:
    """Energy, gradient and Hessian of one implicit Euler step."""

    def __init__(self, phi, mats, W, tau, eps):
        self.phi, self.D, self.W, self.tau, self.eps = phi, mats, W, tau, eps
        self.phi_eps0 = float(phi.phi(eps))

    def grads(self, v):
        return np.stack([D @ v for D in self.D], axis=-1)

    def energy(self, v, hp):
        s = np.sqrt((self.grads(v) ** 2).sum(-1) + self.eps ** 2)
        return float(np.sum(self.W * ((v - hp) ** 2 / (2 * self.tau) + self.phi.phi(s) - self.phi_eps0)))

    def gradient(self, v, hp):
        g = self.grads(v)
        s = np.sqrt((g ** 2).sum(-1) + self.eps ** 2)
        A = (self.phi.dphi(s) / s)[:, None] * g
        out = self.W * (v - hp) / self.tau
        for i, D in enumerate(self.D):
            out = out + D.T @ (self.W * A[:, i])
        return out

    def hessian(self, v, picard=False):
        g = self.grads(v)
        s = np.sqrt((g ** 2).sum(-1) + self.eps ** 2)
        a = self.phi.dphi(s) / s
        b = np.zeros_like(s) if picard else (self.phi.ddphi(s) - a) / s ** 2
        H = sparse.diags(self.W / self.tau)
        for i, Di in enumerate(self.D):
            for j, Dj in enumerate(self.D):
                c = b * g[:, i] * g[:, j] + (a if i == j else 0.0)
                H = H + Di.T @ sparse.diags(self.W * c) @ Dj
        return H.tocsc()


def _solve_step(step, hp, v0, inner, scale, cfg):
    """Damped Newton on the interior nodes; Picard iterations on stall.

    Converged when max |dE/dv| / W * tau <= tol * scale (increment units) or
    when the Newton update itself drops below 1e-3 tol * scale."""
    v = v0.copy()
    hist = []
    picard = False
    for _ in range(cfg.max_iter):
        grad = step.gradient(v, hp)
        res = float(np.abs(grad[inner] / step.W[inner]).max() * step.tau) if inner.any() else 0.0
        hist.append(res)
        if res <= cfg.tol * scale:
            return v, hist
        H = step.hessian(v, picard)[inner][:, inner]
        d = np.zeros_like(v)
        d[inner] = -splinalg.spsolve(H, grad[inner])
        if np.abs(d).max() <= 1e-3 * cfg.tol * scale:
            # round-off floor reached: the update is below the tolerance scale
            return v + d, hist
        e0 = step.energy(v, hp)
        slope = float(grad @ d)
        t = 1.0
        if -slope <= 1e-13 * (abs(e0) + 1e-300):
            # predicted decrease below the energy's round-off: take the full step
            v = v + d
            continue
        while t > 1e-10:
            vn = v + t * d
            if step.energy(vn, hp) <= e0 + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            if picard:
                raise SolverError("line search failed", hist)
            picard = True
            continue
        v = vn
        picard = False
    raise SolverError("Newton did not converge", hist)


def solve_phi_heat(problem, config=None, guess="data"):
    """Discrete phi-caloric function with the parabolic boundary values of u.

    Returns (h, info) with info holding the per-step iteration counts and the
    largest final residual.  ``guess`` is 'data' (u's slice) or 'previous'.
    """
    cfg = config or SolverConfig()
    grid = problem.grid
    u = problem.u.values
    mats, W, inner = _space_ops(grid)
    gu = np.linalg.norm(gradient_array(u, grid.h), axis=-1).max()
    eps = cfg.eps_rel * (gu if gu > 0 else 1.0)
    step = _Step(problem.phi, mats, W, grid.tau, eps)
    scale = max(float(np.abs(u).max()), 1e-300)
    h = np.empty_like(u)
    h[0] = u[0]
    iters, worst = [], 0.0
    for k in range(1, grid.n_t):
        hp = h[k - 1].ravel()
        v0 = (u[k] if guess == "data" else h[k - 1]).ravel().copy()
        v0[~inner] = u[k].ravel()[~inner]
        v, hist = _solve_step(step, hp, v0, inner, scale, cfg)
        h[k] = v.reshape(grid.n_space)
        iters.append(len(hist) - 1)
        worst = max(worst, hist[-1])
    info = {"eps": eps, "iterations": iters, "residual_max": worst, "tol": cfg.tol * scale}
    return SpaceTimeField(grid, h), info


def heat_problem(n_space, n_t, T=0.1, p=2.0, m=1):
    """u = exp(-pi^2 t) prod sin(pi x_i) on [0, 1]^m, with flux H = grad u (heat data)."""
    from .grid import base_grid
    from .orlicz import PowerNFunction
    h = 1.0 / (n_space - 1)
    grid = base_grid(m, (n_space,) * m, n_t, h, T / (n_t - 1))
    mesh = grid.mesh()
    u = np.exp(-m * np.pi ** 2 * (mesh[0] - grid.t_start))
    for i in range(m):
        u = u * np.sin(np.pi * mesh[i + 1])
    u = SpaceTimeField(grid, u * np.ones(grid.shape))
    H = SpaceTimeField(grid, gradient_array(u.values, h))
    return CaloricProblem(u, H, PowerNFunction(p))


def bump_problem(phi, n_space, n_t, eps, m=1, T=0.1, config=None, h=None):
    """Caloric experiment data u = h + eps * b with h discrete phi-caloric.

    h has boundary data g(t, x) = x_1 + sin(pi x) (1 + t) on [0, 1]^m; b is an
    interior bump field with its exact flux K (dt b = div K), scaled to
    max|b| = max|h|.  H = A(grad h) + eps K, so dt u = div H at interior nodes.
    Returns (problem, h).
    """
    from .grid import _profile, base_grid, flux_pair
    hs = 1.0 / (n_space - 1)
    grid = base_grid(m, (n_space,) * m, n_t, hs, T / (n_t - 1))
    if h is None:
        mesh = grid.mesh()
        g = mesh[1] + (1 + mesh[0] - grid.t_start) * np.prod(
            np.stack(np.broadcast_arrays(*[np.sin(np.pi * x) for x in mesh[1:]])), axis=0)
        g = SpaceTimeField(grid, g * np.ones(grid.shape))
        data = CaloricProblem(g, SpaceTimeField(grid, np.zeros(grid.shape + (m,))), phi)
        h, _ = solve_phi_heat(data, config)
    ramp = _profile(0.5 * np.pi / grid.t0, 0.5 * np.pi)
    b, K = flux_pair(grid, [(ramp, np.full(m, 0.1), np.full(m, 0.5), 0.3)])
    s = float(np.abs(h.values).max()) / float(np.abs(b.values).max())
    u = h.with_values(h.values + eps * s * b.values)
    H = SpaceTimeField(grid, a_map(phi, gradient_array(h.values, hs)) + eps * s * K.values)
    return CaloricProblem(u, H, phi), h


# -- measured estimates -------------------------------------------------------

def _means(grid):
    W = weights(grid)
    return W / W.sum()


def energy_check(u, h, H, phi):
    """[sup_t mean_B |w|^2/|I| + mean_Q |V(grad u)-V(grad h)|^2] / mean_Q phi(|grad u|)+phi*(|G|)."""
    grid = u.grid
    Hv = H.values if H.values.ndim == grid.m + 2 else H.values[..., None]
    gu = gradient_array(u.values, grid.h)
    gh = gradient_array(h.values, grid.h)
    G = Hv - a_map(phi, gu)
    mu = _means(grid)
    Wx = weights(grid)[0] / weights(grid)[0].sum()
    w = u.values - h.values
    length = (grid.n_t - 1) * grid.tau
    sup_l2 = float(max(np.sum(Wx * w[k] ** 2) for k in range(grid.n_t)) / length)
    vdiff = float(np.sum(mu * ((v_map(phi, gu) - v_map(phi, gh)) ** 2).sum(-1)))
    den = float(np.sum(mu * (phi.phi(np.linalg.norm(gu, axis=-1)) + phi.conj(np.linalg.norm(G, axis=-1)))))
    num = sup_l2 + vdiff
    return {"ratio": num / den if den > 0 else (0.0 if num == 0 else np.inf),
            "numerator": num, "denominator": den, "sup_l2": sup_l2, "v_energy": vdiff}


def _gamma_of(phi, value):
    """gamma with phi(gamma) = value (monotone root finding on a log scale)."""
    if not value > 0:
        return 0.0
    if getattr(phi, "kind", "") == "power":
        return float((phi.p * value) ** (1 / phi.p))
    f = lambda s: float(phi.phi(np.exp(s))) - value
    lo, hi = -50.0, 50.0
    return float(np.exp(optimize.brentq(f, lo, hi, xtol=1e-14)))


def _zero_pad(grid, values, pad_t, pad_x):
    sp = [(pad_t, pad_t)] + [(pad_x, pad_x)] * grid.m
    v = np.pad(values, sp + [(0, 0)] * (values.ndim - grid.m - 1))
    g = replace(grid, n_space=tuple(n + 2 * pad_x for n in grid.n_space), n_t=grid.n_t + 2 * pad_t,
                t_start=grid.t_start - pad_t * grid.tau,
                x_start=tuple(x - pad_x * grid.h for x in grid.x_start))
    return SpaceTimeField(g, v)


def good_lambda_select(w, G, phi, m0, gamma=None, pad_t=None, pad_x=None):
    """Scan lam = 2^m gamma, m = 0..m0, and keep the level with the smallest
    phi(lam)-weighted superlevel measure of M(grad w chi_Q), M(G chi_Q).

    Returns a dict with lam, alpha, gamma, the measured normalized bound
    [|{M grad w > lam}| + |{M G > phi'(lam)}|] phi(lam) m0 / (phi(gamma)|Q|),
    the pigeonhole sum and per-level data.  Zero data gives lam = 0.
    """
    if int(m0) != m0 or m0 < 1:
        raise ValueError("m0 must be a positive integer")
    m0 = int(m0)
    grid = w.grid
    Gv = G.values if G.values.ndim == grid.m + 2 else G.values[..., None]
    gw = np.linalg.norm(gradient_array(w.values, grid.h), axis=-1)
    gG = np.linalg.norm(Gv, axis=-1)
    mu = _means(grid)
    if gamma is None:
        gamma = _gamma_of(phi, float(np.sum(mu * (phi.phi(gw) + phi.conj(gG)))))
    if not gamma > 0:
        return {"lam": 0.0, "alpha": 0.0, "gamma": 0.0, "bound": 0.0, "pigeonhole": 0.0,
                "levels": [], "bad_fraction": 0.0, "sentinel": True}
    pad_t = grid.n_t if pad_t is None else pad_t
    pad_x = max(2, min(grid.n_space) // 2) if pad_x is None else pad_x
    fw = _zero_pad(grid, gw, pad_t, pad_x)
    fG = _zero_pad(grid, gG, pad_t, pad_x)
    nQ = int(np.prod(grid.shape))
    pg = float(phi.phi(gamma))
    levels = []
    for m in range(m0 + 1):
        lam = 2.0 ** m * gamma
        alpha = lam / float(phi.dphi(lam))
        s1 = maximal.superlevel(fw, alpha, lam)
        s2 = maximal.superlevel(fG, alpha, float(phi.dphi(lam)))
        meas = (int(s1.sum()) + int(s2.sum())) / nQ
        clipped = any(np.moveaxis(s, a, 0)[e].any() for s in (s1, s2)
                      for a in range(s1.ndim) for e in (0, -1))
        levels.append({"m": m, "lam": lam, "alpha": alpha, "measure": meas,
                       "weighted": float(phi.phi(lam)) * meas / pg, "clipped": bool(clipped)})
    best = min(levels, key=lambda d: (d["weighted"], d["m"]))
    return {"lam": best["lam"], "alpha": best["alpha"], "gamma": gamma,
            "bound": best["weighted"] * m0, "pigeonhole": float(sum(d["weighted"] for d in levels)),
            "levels": levels, "bad_fraction": best["measure"], "sentinel": False}


def defect_family(grid, grad_scale=1.0, scales=(1.0, 0.5, 0.25), shifts=(-0.25, 0.0, 0.25)):
    """Tensor bumps compactly supported in Q, scaled to sup|grad xi| = grad_scale."""
    t = grid.times()
    T0, T1 = t[0], t[-1]
    fam = []
    for s in scales:
        for dt in shifts:
            for dx in shifts:
                if s == 1.0 and (dt or dx):
                    continue
                ct = 0.5 * (T0 + T1) + dt * (T1 - T0)
                wt = 0.5 * s * (T1 - T0)
                bt = np.clip(1 - ((t - ct) / wt) ** 2, 0, None) ** 2
                b = bt.reshape((-1,) + (1,) * grid.m)
                for i in range(grid.m):
                    x = grid.coords(i)
                    L = grid.box[i]
                    cx = grid.x_start[i] + 0.5 * L + (dx if i == 0 else 0.0) * L
                    bx = np.clip(1 - ((x - cx) / (0.5 * s * L)) ** 2, 0, None) ** 2
                    shp = [1] * (grid.m + 1)
                    shp[i + 1] = -1
                    b = b * bx.reshape(shp)
                b = b * np.ones(grid.shape)
                for ax in range(b.ndim):
                    # compact support inside Q: zero on every face
                    idx = [slice(None)] * b.ndim
                    idx[ax] = [0, -1]
                    b[tuple(idx)] = 0.0
                gmax = np.linalg.norm(gradient_array(b, grid.h), axis=-1).max()
                if gmax > 0:
                    fam.append(b * grad_scale / gmax)
    return fam


def _weak_form(u, Av, xi, grid):
    """mean_Q -u dt xi + A . grad xi, with forward differences in time (xi = 0 at the ends)."""
    Wx = weights(grid)[0]
    dxi = np.zeros_like(xi)
    dxi[:-1] = (xi[1:] - xi[:-1]) / grid.tau
    dxi[-1] = -xi[-1] / grid.tau
    gx = gradient_array(xi, grid.h)
    tot = grid.tau * float(np.sum(Wx * (-u * dxi + (Av * gx).sum(-1))))
    return tot / (Wx.sum() * (grid.n_t - 1) * grid.tau)


def defect(u, H, phi, family, enlarge_means=None):
    """max over the family of |mean_Q -u dt xi + A(grad u) grad xi| /
    (mean phi(|grad u|) + mean phi*(|H|) + phi(sup|grad xi|))."""
    if not family:
        raise ValueError("empty test family")
    grid = u.grid
    Hv = H.values if H.values.ndim == grid.m + 2 else H.values[..., None]
    gu = gradient_array(u.values, grid.h)
    Av = a_map(phi, gu)
    if enlarge_means is None:
        mu = _means(grid)
        base = float(np.sum(mu * (phi.phi(np.linalg.norm(gu, axis=-1)) + phi.conj(np.linalg.norm(Hv, axis=-1)))))
    else:
        base = float(enlarge_means)
    best = 0.0
    for xi in family:
        num = abs(_weak_form(u.values, Av, xi, grid))
        gx = float(np.linalg.norm(gradient_array(xi, grid.h), axis=-1).max())
        best = max(best, num / (base + float(phi.phi(gx))))
    return best


def distances(u, h, phi, sigma=0.5, q=1.0, theta=0.25):
    """(D1, D2): the L^q(L^{2 sigma}) distance of u - h and the V-gap in L^{2 theta}."""
    grid = u.grid
    length = (grid.n_t - 1) * grid.tau
    Wt = _trap_1d(grid.n_t, grid.tau) / length
    Wx = weights(grid)[0] / weights(grid)[0].sum()
    f = (u.values - h.values) ** 2 / length
    inner = np.array([np.sum(Wx * f[k] ** sigma) for k in range(grid.n_t)])
    D1 = float(np.sum(Wt * inner ** (q / sigma)) ** (1 / q))
    gu = gradient_array(u.values, grid.h)
    gh = gradient_array(h.values, grid.h)
    vv = ((v_map(phi, gu) - v_map(phi, gh)) ** 2).sum(-1)
    D2 = float(np.sum(_means(grid) * vv ** theta) ** (1 / theta))
    return D1, D2


def _tilde_means(problem):
    """mean over Q~ of phi(|grad u|) + phi*(|H|); Q~ = Q unless enlarged, in which
    case the data are continued by zero outside Q (the only data available)."""
    grid = problem.grid
    gu = np.linalg.norm(gradient_array(problem.u.values, grid.h), axis=-1)
    gH = np.linalg.norm(problem.H.values, axis=-1)
    W = weights(grid)
    total = float(np.sum(W * (problem.phi.phi(gu) + problem.phi.conj(gH))))
    vol = float(W.sum()) * problem.enlarge ** (grid.m + 2)
    return total / vol


def approximation_experiment(problem, config=None, m0=6, h=None):
    """Run the full pipeline and report the measured quantities.

    h may be supplied (a previously computed comparison function)."""
    phi = problem.phi
    grid = problem.grid
    info = {}
    if h is None:
        h, info = solve_phi_heat(problem, config)
    u = problem.u
    w = u.with_values(u.values - h.values)
    gu = gradient_array(u.values, grid.h)
    gh = gradient_array(h.values, grid.h)
    G = problem.H.values - a_map(phi, gu)
    # the flux of w in the discrete equation: dt w = div(H - A(grad h))
    F = problem.H.values - a_map(phi, gh)
    pgamma = _tilde_means(problem)
    gamma = _gamma_of(phi, pgamma)
    rep = {"phi": phi.name, "sigma": problem.sigma, "q": problem.q, "theta": problem.theta,
           "m0": m0, "gamma": gamma, "phi_gamma": pgamma}
    rep["solver"] = {k: info[k] for k in ("eps", "residual_max", "tol")} if info else {}
    if info:
        rep["solver"]["iterations_max"] = int(max(info["iterations"], default=0))
    fam = defect_family(grid, grad_scale=gamma if gamma > 0 else 1.0)
    rep["delta"] = defect(u, problem.H, phi, fam, enlarge_means=pgamma)
    D1, D2 = distances(u, h, phi, problem.sigma, problem.q, problem.theta)
    rep.update(D1=D1, D2=D2)
    rep["D1_rel"] = D1 / pgamma if pgamma > 0 else 0.0
    rep["D2_rel"] = D2 / pgamma if pgamma > 0 else 0.0
    rep["D_rel"] = rep["D1_rel"] + rep["D2_rel"]
    en = energy_check(u, h, problem.H, phi)
    rep["energy_ratio"] = en["ratio"]
    # dt w - div F at interior nodes (zero up to the solver tolerance)
    resid = np.zeros(grid.shape)
    resid[1:] = (w.values[1:] - w.values[:-1]) / grid.tau - divergence_array(F, grid.h)[1:]
    interior = (slice(1, None),) + tuple(slice(1, -1) for _ in range(grid.m))
    rep["equation_residual"] = float(np.abs(resid[interior]).max())
    f = np.abs(w.values) / np.sqrt((grid.n_t - 1) * grid.tau)
    lhs, rhs = interpolation_check(f, _trap_1d(grid.n_t, grid.tau), weights(grid)[0],
                                   2 * problem.sigma, 2 * problem.q)
    rep["interpolation"] = {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else 0.0}
    gl = good_lambda_select(w, SpaceTimeField(grid, F), phi, m0, gamma=gamma)
    rep["good_lambda"] = {k: gl[k] for k in ("lam", "alpha", "bound", "pigeonhole", "bad_fraction", "sentinel")}
    rep["G_u_mean"] = float(np.sum(_means(grid) * np.linalg.norm(G, axis=-1)))
    if gl["sentinel"] or np.abs(w.values).max() == 0:
        rep["truncation"] = {"skipped": True}
        return rep
    res = truncate(w, SpaceTimeField(grid, F), TruncationParams(gl["lam"], gl["alpha"], phi=phi))
    rep["truncation"] = _proof_terms(res, u, h, phi, problem.H.values, pgamma, grid)
    return rep


def _proof_terms(res, u, h, phi, H, pgamma, grid):
    """Measured terms of the test with xi = w_lam eta, eta = (t+ - t)/(t+ - t-)."""
    wl = res.wlam.values
    w = u.values - h.values
    t = grid.times()
    length = t[-1] - t[0]
    eta = np.clip((t[-1] - t) / length, 0, None).reshape((-1,) + (1,) * grid.m)
    mu = _means(grid)
    gu = gradient_array(u.values, grid.h)
    gh = gradient_array(h.values, grid.h)
    gl = gradient_array(wl, grid.h)
    I1 = float(np.sum(mu * wl ** 2 / 2)) / length
    dxi = np.zeros_like(wl)
    xi = wl * eta
    dxi[:-1] = (xi[1:] - xi[:-1]) / grid.tau
    I = -float(np.sum(mu * (w - wl) * dxi))
    II = float(np.sum(mu * ((a_map(phi, gu) - a_map(phi, gh)) * gl).sum(-1) * eta))
    tested = abs(_weak_form(u.values, a_map(phi, gu), xi, grid))
    glmax = float(np.linalg.norm(gradient_array(xi, grid.h), axis=-1).max())
    return {"skipped": False, "cylinders": len(res.cover),
            "bad_fraction": float(res.bad_base.mean()),
            "I1": I1, "I": I, "II": II, "tested_value": tested,
            "grad_xi_max": glmax, "phi_grad_xi_rel": float(phi.phi(glmax)) / pgamma if pgamma > 0 else 0.0}


def interpolation_check(f, t_weights, x_weights, a=1.0, b=2.0):
    """Interpolation closing the approximation argument, measured.

    For f >= 0 sampled on I x B (rows = time) returns (lhs, rhs) with
        lhs = (mean_I (mean_B f^a)^(b/a))^(2/b),
        rhs = sup_I (mean_B f^2)^((b-2)/b) * (mean_I (mean_B f)^2)^(2/b).
    lhs <= rhs holds whenever a in [1, 2] and b (2 - a) >= 2 a; the
    experiment uses a = 2 sigma, b = 2 q.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("f must be nonnegative")
    Wt = np.asarray(t_weights, dtype=float)
    Wt = Wt / Wt.sum()
    Wx = np.asarray(x_weights, dtype=float)
    Wx = Wx / Wx.sum()
    ax = tuple(range(1, f.ndim))
    m1 = np.sum(Wx * f, axis=ax)
    m2 = np.sum(Wx * f ** 2, axis=ax)
    ma = np.sum(Wx * f ** a, axis=ax)
    lhs = float(np.sum(Wt * ma ** (b / a)) ** (2 / b))
    rhs = float(m2.max() ** ((b - 2) / b) * np.sum(Wt * m1 ** 2) ** (2 / b))
    return lhs, rhs
