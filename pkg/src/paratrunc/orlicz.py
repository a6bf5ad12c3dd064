"""N-function calculus.

An :class:`NFunction` is described by its right derivative ``dphi``; the
function itself, the second derivative and the complementary function are
derived from it, in closed form for power laws and numerically otherwise.
Everything here is vectorised over numpy arrays.
"""
import csv
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_simpson
from scipy.interpolate import PchipInterpolator

__all__ = [
    "NFunction",
    "PowerNFunction",
    "tabulated",
    "from_spec",
    "conjugate",
    "legendre",
    "psi_from",
    "shifted",
    "shifted_phi",
    "tensor_maps",
    "young_constant",
    "young_gap",
]

# composite Gauss-Legendre on [0, 1], geometrically graded towards 0
_GL_X, _GL_W = leggauss(10)
_LEVELS = 60
_left = 2.0 ** -np.arange(1, _LEVELS + 1)
_right = 2.0 ** -np.arange(0, _LEVELS)
_U = (0.5 * (_right - _left)[:, None] * (_GL_X[None, :] + 1) + _left[:, None]).ravel()
_UW = (0.5 * (_right - _left)[:, None] * _GL_W[None, :]).ravel()

SAMPLE_T = np.logspace(-6, 6, 241)


def _integrate_from_zero(f, t):
    """int_0^t f(s) ds for every entry of ``t`` (f vectorised)."""
    t = np.asarray(t, dtype=float)
    flat = t.reshape(-1)
    vals = f(flat[:, None] * _U[None, :])
    return (flat * (vals @ _UW)).reshape(t.shape)


def _inverse_monotone(f, y, lo=1e-150, hi=1e150, iters=120):
    """Smallest-ish x >= 0 with f(x) = y for nondecreasing f, by log-bisection."""
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1)
    a = np.full(flat.shape, math.log(lo))
    b = np.full(flat.shape, math.log(hi))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        above = f(np.exp(mid)) >= flat
        b = np.where(above, mid, b)
        a = np.where(above, a, mid)
    x = np.exp(0.5 * (a + b))
    x = np.where(flat <= 0, 0.0, x)
    return x.reshape(y.shape)


class NFunction:
    """Convex generator given through its derivative.

    ``dphi`` must be a vectorised, nondecreasing callable with ``dphi(0) = 0``.
    ``phi`` and ``ddphi`` are optional closed forms; missing ones are
    obtained by quadrature and by a log-difference quotient respectively.
    """

    kind = "generic"

    def __init__(self, dphi, phi=None, ddphi=None, name="phi", inverse_dphi=None):
        self._dphi = dphi
        self._phi = phi
        self._ddphi = ddphi
        self._inverse_dphi = inverse_dphi
        self.name = name
        self._delta2 = None

    def phi(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self._phi is not None:
            return self._phi(t)
        return _integrate_from_zero(self._dphi, t)

    __call__ = phi

    def dphi(self, t):
        return self._dphi(np.abs(np.asarray(t, dtype=float)))

    def ddphi(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self._ddphi is not None:
            return self._ddphi(t)
        eps = 1e-5
        up = self._dphi(t * (1 + eps))
        dn = self._dphi(t * (1 - eps))
        return (up - dn) / (2 * eps * np.where(t > 0, t, 1.0))

    def inverse_dphi(self, s):
        """(phi')^{-1}(s), the derivative of the conjugate."""
        if self._inverse_dphi is not None:
            return self._inverse_dphi(np.asarray(s, dtype=float))
        return _inverse_monotone(self._dphi, s)

    def conj(self, s):
        """phi*(s) = s t* - phi(t*) with t* = (phi')^{-1}(s)."""
        s = np.asarray(s, dtype=float)
        t = self.inverse_dphi(s)
        return s * t - self.phi(t)

    def conjugate_function(self):
        return NFunction(self.inverse_dphi, phi=self.conj, name=self.name + "*",
                         inverse_dphi=self.dphi)

    # sampled constants ------------------------------------------------------

    def sample_grid(self):
        return SAMPLE_T

    def characteristics(self):
        """Range-local (c1, c2) with c1 <= t phi''(t) / phi'(t) <= c2."""
        t = self.sample_grid()
        ratio = t * self.ddphi(t) / self.dphi(t)
        return float(ratio.min()), float(ratio.max())

    def delta2(self):
        """Sampled Delta_2 constants (for phi, for phi*)."""
        if self._delta2 is None:
            t = self.sample_grid()
            d = float(np.max(self.phi(2 * t) / self.phi(t)))
            s = self.dphi(t)
            dc = float(np.max(self.conj(2 * s) / self.conj(s)))
            self._delta2 = (d, dc)
        return self._delta2

    def __repr__(self):
        return f"NFunction({self.name})"


class PowerNFunction(NFunction):
    """phi(t) = t^p / p."""

    kind = "power"

    def __init__(self, p):
        p = float(p)
        if not p > 1:
            raise ValueError(f"power N-function needs p > 1, got {p}")
        self.p = p
        self.q = p / (p - 1)

        def dd(t):
            with np.errstate(divide="ignore"):
                return (p - 1) * t ** (p - 2)

        super().__init__(
            lambda t: t ** (p - 1),
            phi=lambda t: t ** p / p,
            ddphi=dd,
            name=f"p:{p:g}",
            inverse_dphi=lambda s: np.abs(s) ** (1 / (p - 1)),
        )

    def conj(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        return s ** self.q / self.q

    def conjugate_function(self):
        return PowerNFunction(self.q)

    def characteristics(self):
        return self.p - 1, self.p - 1

    def delta2(self):
        return 2.0 ** self.p, 2.0 ** self.q


class _Tabulated(NFunction):
    kind = "table"

    def __init__(self, t, dphi_values, name):
        t = np.asarray(t, dtype=float)
        d = np.asarray(dphi_values, dtype=float)
        order = np.argsort(t)
        t, d = t[order], d[order]
        if t.size < 4 or np.any(t <= 0) or np.any(d <= 0):
            raise ValueError("tabulated generator needs >= 4 samples with t > 0, phi'(t) > 0")
        if np.any(np.diff(d) < 0):
            raise ValueError("tabulated phi' is decreasing somewhere: generator is not convex")
        lt, ld = np.log(t), np.log(d)
        self._lt = lt
        slope = np.diff(ld) / np.diff(lt)
        self._lo_slope, self._hi_slope = slope[0], slope[-1]
        self._pchip = PchipInterpolator(lt, ld, extrapolate=False)
        self._dpchip = self._pchip.derivative()
        self._t_lo, self._t_hi = t[0], t[-1]
        self._d_lo, self._d_hi = d[0], d[-1]
        # cumulative phi on a fine log grid (Simpson in log t) plus the power-law head
        fine = np.linspace(lt[0], lt[-1], 16001)
        tf = np.exp(fine)
        cum = cumulative_simpson(self._dphi_impl(tf) * tf, x=fine, initial=0.0)
        head = self._t_lo * self._d_lo / (self._lo_slope + 1)
        self._fine, self._cum = fine, head + cum
        super().__init__(self._dphi_impl, phi=self._phi_impl, ddphi=self._ddphi_impl, name=name)
        c1, c2 = self.characteristics()
        if c1 <= 0 or c2 > 50:
            raise ValueError(f"tabulated generator violates the characteristic bounds (c1={c1:g}, c2={c2:g})")

    def _log_dphi(self, t):
        lt = np.log(np.where(t > 0, t, self._t_lo))
        inside = self._pchip(np.clip(lt, self._lt[0], self._lt[-1]))
        lo = np.log(self._d_lo) + self._lo_slope * (lt - self._lt[0])
        hi = np.log(self._d_hi) + self._hi_slope * (lt - self._lt[-1])
        return np.where(lt < self._lt[0], lo, np.where(lt > self._lt[-1], hi, inside))

    def _dphi_impl(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, np.exp(self._log_dphi(t)), 0.0)

    def _ddphi_impl(self, t):
        t = np.asarray(t, dtype=float)
        lt = np.log(np.where(t > 0, t, self._t_lo))
        sl = np.where(lt < self._lt[0], self._lo_slope,
                      np.where(lt > self._lt[-1], self._hi_slope,
                               self._dpchip(np.clip(lt, self._lt[0], self._lt[-1]))))
        return self._dphi_impl(t) * sl / np.where(t > 0, t, 1.0)

    def _phi_impl(self, t):
        t = np.asarray(t, dtype=float)
        lt = np.log(np.where(t > 0, t, self._t_lo))
        d = self._dphi_impl(t)
        lo = t * d / (self._lo_slope + 1)
        mid = np.exp(np.interp(lt, self._fine, np.log(self._cum)))
        tail_start = self._cum[-1]
        hi = tail_start + (t * d - self._t_hi * self._d_hi) / (self._hi_slope + 1)
        out = np.where(lt < self._lt[0], lo, np.where(lt > self._lt[-1], hi, mid))
        return np.where(t > 0, out, 0.0)

    def sample_grid(self):
        return np.logspace(self._lt[0] / math.log(10), self._lt[-1] / math.log(10), 241)[1:-1]


def tabulated(t, dphi_values, name="table"):
    """N-function from samples of phi' (monotone cubic interpolation in log-log)."""
    return _Tabulated(t, dphi_values, name)


def from_spec(spec):
    """Parse ``p:<float>`` or ``table:<path>`` (CSV of t, phi'(t))."""
    kind, _, arg = spec.partition(":")
    if kind == "p":
        return PowerNFunction(float(arg))
    if kind == "table":
        rows = []
        with open(arg, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header line
        arr = np.array(rows)
        return tabulated(arr[:, 0], arr[:, 1], name=spec)
    raise ValueError(f"unknown N-function spec {spec!r}")


def conjugate(phi, s):
    """phi*(s); closed form for power kind, inverse-derivative search otherwise."""
    if np.any(np.asarray(s) < 0):
        raise ValueError("conjugate is evaluated at s >= 0 only")
    return phi.conj(s)


def legendre(phi_fn, dphi_fn, s):
    """Purely numerical Legendre transform sup_t (s t - phi(t)).

    Uses only evaluations of ``phi_fn`` and of the nondecreasing ``dphi_fn``;
    the maximiser is located by bisection on ``dphi_fn(t) = s``.
    """
    t = _inverse_monotone(dphi_fn, s)
    s = np.asarray(s, dtype=float)
    return s * t - phi_fn(t)


def psi_from(phi):
    """The N-function with psi'(t) = sqrt(phi'(t) t)."""
    if isinstance(phi, PowerNFunction):
        return PowerNFunction(phi.p / 2 + 1)

    def dpsi(t):
        return np.sqrt(phi.dphi(t) * t)

    def ddpsi(t):
        d = dpsi(t)
        return (phi.ddphi(t) * t + phi.dphi(t)) / (2 * np.where(d > 0, d, np.inf))

    return NFunction(dpsi, ddphi=ddpsi, name=f"psi[{phi.name}]")


def shifted(phi, a):
    """Shifted N-function phi_a with phi_a'(t) = phi'(a + t) t / (a + t)."""
    a = float(a)
    if a < 0:
        raise ValueError("shift must be nonnegative")
    if a == 0:
        return phi
    if isinstance(phi, PowerNFunction) and phi.p == 2:
        return PowerNFunction(2)

    def d(t):
        return phi.dphi(a + t) * t / (a + t)

    def dd(t):
        return phi.ddphi(a + t) * t / (a + t) + phi.dphi(a + t) * a / (a + t) ** 2

    return NFunction(d, ddphi=dd, name=f"{phi.name}_{a:g}")


def shifted_phi(phi, a, t):
    """phi_a(t) for broadcastable arrays ``a`` and ``t``."""
    a, t = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(t, dtype=float))
    af, tf = a.reshape(-1), np.abs(t.reshape(-1))
    s = tf[:, None] * _U[None, :]
    shift = af[:, None]
    denom = np.where(shift + s > 0, shift + s, 1.0)
    vals = phi.dphi(shift + s) * s / denom
    return (tf * (vals @ _UW)).reshape(a.shape)


def _vec_map(deriv, Q):
    Q = np.asarray(Q, dtype=float)
    n = np.linalg.norm(Q, axis=-1, keepdims=True)
    safe = np.where(n > 0, n, 1.0)
    return np.where(n > 0, deriv(n) * Q / safe, 0.0)


def tensor_maps(phi, P, Q):
    """A(Q) = phi'(|Q|) Q/|Q| and V(Q) = psi'(|Q|) Q/|Q|, with equivalence ratios.

    ``P`` and ``Q`` are arrays whose last axis holds the (flattened) tensor.
    Returns a dict with ``A_P``, ``V_P``, ``A_Q``, ``V_Q`` and the ratios

        r1 = (A(P)-A(Q)).(P-Q) / |V(P)-V(Q)|^2
        r2 = |V(P)-V(Q)|^2 / phi_{|P|}(|P-Q|)

    Where P == Q both ratios are set to 1 and ``degenerate`` is True.
    """
    psi = psi_from(phi)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    AP, AQ = _vec_map(phi.dphi, P), _vec_map(phi.dphi, Q)
    VP, VQ = _vec_map(psi.dphi, P), _vec_map(psi.dphi, Q)
    diff = P - Q
    num = np.sum((AP - AQ) * diff, axis=-1)
    vv = np.sum((VP - VQ) ** 2, axis=-1)
    sh = shifted_phi(phi, np.linalg.norm(P, axis=-1), np.linalg.norm(diff, axis=-1))
    degenerate = (vv == 0) | (sh == 0)
    r1 = np.where(degenerate, 1.0, num / np.where(degenerate, 1.0, vv))
    r2 = np.where(degenerate, 1.0, vv / np.where(degenerate, 1.0, sh))
    return {"A_P": AP, "V_P": VP, "A_Q": AQ, "V_Q": VQ, "r1": r1, "r2": r2,
            "degenerate": degenerate}


def young_constant(phi, delta):
    """c_delta with t s <= delta phi(t) + c_delta phi*(s), from Delta_2(phi*)."""
    if delta >= 1:
        return 1.0
    k = math.ceil(math.log2(1.0 / delta))
    return delta * phi.delta2()[1] ** k


def young_gap(phi, t, s, delta):
    """delta phi(t) + c_delta phi*(s) - t s; nonnegative up to rounding."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return delta * phi.phi(t) + young_constant(phi, delta) * phi.conj(s) - t * s
