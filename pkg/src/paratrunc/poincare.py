"""Parabolic Poincare inequalities on single cylinders, measured.

All cylinder means are plain node averages over the lattice nodes of Q; Q
must lie inside the grid.
"""
import numpy as np

from .grid import SpaceTimeField, base_grid, gradient_array, random_pair
from .maximal import ParabolicCylinder, _clip, n_q

__all__ = ["cylinder_nodes", "weight_c0", "poincare_gap", "time_oscillation",
           "norm_conjugate_check", "random_admissible", "battery"]


def cylinder_nodes(grid, Q):
    """(slices, mask) of Q's nodes; Q must not leave the grid."""
    lo, hi = Q.index_box(grid)
    src, dst = _clip(grid, lo, hi)
    mask = Q.box_mask(grid, lo, hi)
    if mask[src].sum() != mask.sum():
        raise ValueError("cylinder leaves the grid")
    return dst, mask[src]


def weight_c0(rho_q):
    """c0 = |Q| ||rho||_inf / ||rho||_1 over the nodes of Q."""
    total = rho_q.sum()
    if not total > 0 or np.any(rho_q < 0):
        raise ValueError("degenerate weight")
    return float(rho_q.max() * rho_q.size / total)


def _rho_on(rho, sl, mask):
    if rho is None:
        return np.ones(int(mask.sum()))
    return np.asarray(rho, dtype=float)[sl][mask]


def poincare_gap(a, G, Q, rho=None, mode="weak", phi=None):
    """LHS/RHS of the weak or modular Poincare inequality on Q.

    weak:     mean |a - <a>_rho| / r   vs  mean |grad a| + alpha mean |G|
    modular:  mean phi(|a - <a>_rho| / r)  vs  mean phi(|grad a|) + phi(alpha mean |G|)
    """
    grid = a.grid
    sl, mask = cylinder_nodes(grid, Q)
    rq = _rho_on(rho, sl, mask)
    c0 = weight_c0(rq)
    av = a.values[sl][mask]
    mean_rho = float(np.sum(rq * av) / rq.sum())
    dev = np.abs(av - mean_rho) / Q.r
    grad = np.linalg.norm(gradient_array(a.values, grid.h)[sl][mask], axis=-1)
    flux = float(np.linalg.norm(G.values[sl][mask], axis=-1).mean()) if G is not None else 0.0
    if mode == "weak":
        lhs = float(dev.mean())
        rhs = float(grad.mean()) + Q.alpha * flux
    elif mode == "modular":
        if phi is None:
            raise ValueError("modular mode needs phi")
        lhs = float(np.mean(phi.phi(dev)))
        rhs = float(np.mean(phi.phi(grad))) + float(phi.phi(Q.alpha * flux))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if lhs == 0:
        ratio = 0.0
    else:
        ratio = lhs / rhs if rhs > 0 else np.inf
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio, "c0": c0}


def _eta_c0(eta, grid, r):
    g = gradient_array(eta[None], grid.h)[0]
    l1 = eta.sum()
    return float((eta.max() + r * np.linalg.norm(g, axis=-1).max()) * eta.size / l1)


def time_oscillation(a, Q, eta=None, G=None, c0_max=32.0):
    """Time oscillation of the eta-means of a on Q and its two majorants.

    Returns a dict with ``osc`` = mean_I |<a(t)>_eta - <a>_{eta x I}|,
    ``family`` = r alpha N_Q(dt a) (test-family value), and when G is given
    ``flux`` = r alpha mean_Q |G| (the chain bound).  ``eta`` is a spatial
    weight on the ball nodes (default: the polynomial bump).
    """
    grid = a.grid
    sl, mask = cylinder_nodes(grid, Q)
    ball = mask.any(axis=0)
    xs = np.meshgrid(*[grid.coords(i)[sl[i + 1]] for i in range(grid.m)], indexing="ij")
    if eta is None:
        d2 = sum((x - c) ** 2 for x, c in zip(xs, Q.x)) / Q.r ** 2
        eta = np.clip(1 - d2, 0, None) ** 2
    eta = np.where(ball, np.asarray(eta, dtype=float), 0.0)
    if np.any(eta < 0) or not eta.sum() > 0:
        raise ValueError("eta must be nonnegative with positive mass")
    c0 = _eta_c0(np.where(ball, eta, 0.0), grid, Q.r) * ball.sum() / eta.size
    if c0 > c0_max:
        raise ValueError(f"eta violates the seminorm condition (c0 = {c0:.3g})")
    times = mask.any(axis=tuple(range(1, grid.m + 1)))
    av = a.values[sl]
    means = np.tensordot(av, eta, axes=grid.m) / eta.sum()
    means = means[times]
    osc = float(np.abs(means - means.mean()).mean())
    out = {"osc": osc, "c0": c0,
           "family": Q.r * Q.alpha * n_q(a, None, Q, "test-family")}
    if G is not None:
        out["flux"] = Q.r * Q.alpha * float(np.linalg.norm(G.values[sl][mask], axis=-1).mean())
    return out


def _trap(y, t):
    return float(np.sum((y[1:] + y[:-1]) * np.diff(t)) / 2)


def _bump(t, c, w):
    return np.clip(1 - ((t - c) / w) ** 2, 0, None) ** 2


def _mollify(v, t, eps):
    dt = t[1] - t[0]
    k = max(int(round(eps / dt)), 1)
    ker = _bump(np.arange(-k, k + 1) * dt, 0.0, (k + 0.5) * dt)
    return np.convolve(v, ker / ker.sum(), mode="same")


def _dual_family(f, t, seed=0, n_random=20, scales=(0.02, 0.05, 0.1)):
    """Mean-zero compactly supported beta with sup|beta| <= 1."""
    rng = np.random.default_rng(seed)
    L = t[-1] - t[0]
    fam = []
    for _ in range(n_random):
        s = rng.choice(scales) * 4
        c1, c2 = rng.uniform(t[0] + s * L, t[-1] - s * L, 2)
        b1, b2 = _bump(t, c1, s * L), _bump(t, c2, s * L)
        fam.append(b1 - b2 * _trap(b1, t) / max(_trap(b2, t), 1e-300))
    # data-adapted members: mollified, cut-off signs of f - <f>
    g = np.sign(f - _trap(f, t) / L)
    for eps in scales:
        inner = (t > t[0] + eps * L) & (t < t[-1] - eps * L)
        if inner.sum() < 3:
            continue
        gi = np.where(inner, g - _trap(g * inner, t) / _trap(inner.astype(float), t), 0.0)
        fam.append(_mollify(gi, t, 0.5 * eps * L))
    out = []
    for b in fam:
        b = b - _trap(b, t) / L * (np.abs(b) > 0)
        m = np.abs(b).max()
        if m > 0:
            out.append(b / m)
    return out


def norm_conjugate_check(f, t=None, seed=0):
    """(int |f - <f>|, sup_beta int f beta, sup_gamma |int f gamma'|) on I."""
    f = np.asarray(f, dtype=float)
    t = np.linspace(0.0, 1.0, f.size) if t is None else np.asarray(t, dtype=float)
    L = t[-1] - t[0]
    lhs = _trap(np.abs(f - _trap(f, t) / L), t)
    fam = _dual_family(f, t, seed)
    sup_beta = max([0.0] + [_trap(f * b, t) for b in fam] + [_trap(-f * b, t) for b in fam])
    sup_gamma = 0.0
    for b in fam:
        gam = np.concatenate([[0.0], np.cumsum((b[1:] + b[:-1]) / 2 * np.diff(t))])
        dg = np.gradient(gam, t)
        dg /= max(np.abs(dg).max(), 1e-300)
        sup_gamma = max(sup_gamma, abs(_trap(f * dg, t)))
    return lhs, sup_beta, sup_gamma


# -- batteries ----------------------------------------------------------------

def random_admissible(grid, rng, alpha=1.0):
    """(a, G, rho, Q) with dt a = div G exactly on the grid.

    a is a flux-generated field plus a time-independent profile; Q is a
    cylinder placed inside the grid by physical coordinates; rho is one of
    uniform, a time x space bump, or a smooth positive random weight.
    """
    w, G = random_pair(grid, int(rng.integers(1 << 31)), n_sources=3)
    mesh = grid.mesh()
    prof = 0.0
    for _ in range(2):
        c = rng.uniform(0.2, 0.8, grid.m) * np.array(grid.box)
        k = rng.uniform(1, 4)
        term = rng.normal()
        for i in range(grid.m):
            term = term * np.cos(k * (mesh[i + 1] - c[i]))
        prof = prof + term
    a = SpaceTimeField(grid, w.values + prof * np.ones(grid.shape))
    T = (grid.n_t - 1) * grid.tau
    L = min(grid.box)
    r = rng.uniform(0.15, 0.35) * min(L, np.sqrt(T / alpha))
    t = grid.t_start + rng.uniform(alpha * r * r, T - alpha * r * r)
    x = tuple(grid.x_start[i] + rng.uniform(r, grid.box[i] - r) for i in range(grid.m))
    Q = ParabolicCylinder(t, x, r, alpha)
    kind = rng.integers(3)
    if kind == 0:
        rho = None
    elif kind == 1:
        tt = mesh[0] - t
        d2 = sum((mesh[i + 1] - x[i]) ** 2 for i in range(grid.m)) / r ** 2
        rho = (np.abs(tt) <= alpha * r * r) * np.clip(1 - d2, 0, None) ** 2 + 0.0 * mesh[0]
        rho = rho * np.ones(grid.shape)
    else:
        ph = rng.uniform(0, 2 * np.pi, grid.m + 1)
        wave = np.cos(3 * mesh[0] / T + ph[0])
        for i in range(grid.m):
            wave = wave * np.sin(2 * mesh[i + 1] + ph[i + 1])
        rho = (1.5 + wave) * np.ones(grid.shape)
    return a, G, rho, Q


def battery(n, seed, mode="weak", phi=None, m=1, n_space=33, n_t=33, refine=0, alpha=1.0):
    """Ratios for n seeded admissible problems; ``refine`` halves h (and quarters tau) that many times."""
    n_space = (n_space - 1) * 2 ** refine + 1
    n_t = (n_t - 1) * 4 ** refine + 1
    h = 1.0 / (n_space - 1)
    grid = base_grid(m, (n_space,) * m, n_t, h, 0.5 / (n_t - 1))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a, G, rho, Q = random_admissible(grid, rng, alpha)
        out.append(poincare_gap(a, G, Q, rho, mode, phi))
    return out
