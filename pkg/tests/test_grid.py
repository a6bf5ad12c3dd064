import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paratrunc import grid as gr
from paratrunc.grid import SpaceTimeField, base_grid
from paratrunc.orlicz import PowerNFunction


def small(m=1, n=12, nt=10):
    return base_grid(m, n, nt, 1.0 / (n - 1), 0.5 / (nt - 1))


def residual_l1(w, G):
    # node pairing tau h^m, the natural one for backward differences
    r = gr.weak_residual(w, G).values
    return float(np.sum(np.abs(r)) * w.grid.cell)


def random_xi(grid, rng):
    """Compactly supported smooth bump on the grid."""
    mesh = grid.mesh()
    t = grid.times()
    tc = rng.uniform(t[0], t[-1])
    s = rng.uniform(0.1, 0.4) * (t[-1] - t[0])
    xi = np.clip(1 - ((mesh[0] - tc) / s) ** 2, 0, None) ** 2
    for i in range(grid.m):
        x = grid.coords(i)
        c = rng.uniform(x[0], x[-1])
        r = rng.uniform(0.1, 0.4) * (x[-1] - x[0])
        xi = xi * np.clip(1 - ((mesh[i + 1] - c) / r) ** 2, 0, None) ** 2
    return xi * np.ones(grid.shape)


def test_gridspec_validation():
    with pytest.raises(ValueError):
        base_grid(3, 8, 8, 0.1, 0.1)
    with pytest.raises(ValueError):
        base_grid(1, 3, 8, 0.1, 0.1)
    with pytest.raises(ValueError):
        base_grid(1, 8, 8, -0.1, 0.1)
    g = small()
    assert g.times()[-1] == pytest.approx(0.0)
    assert g.box == pytest.approx((1.0,))


def test_field_rejects_nonfinite():
    g = small()
    v = np.zeros(g.shape)
    v[0, 0] = np.nan
    with pytest.raises(ValueError):
        SpaceTimeField(g, v)


def test_extend_zero():
    g = small(2, 8, 6)
    w, G = gr.preset_pair(g, "zero")
    we, Ge = gr.extend(w, G)
    assert not we.values.any() and not Ge.values.any()
    assert we.grid.n_t > g.n_t and we.grid.n_space[0] > g.n_space[0]


def test_extend_reflection_identity():
    g = small(1, 10, 9)
    t, x = g.mesh()
    w = SpaceTimeField(g, (t - 0.3) ** 2 * np.sin(np.pi * x) + 0 * t)
    G = SpaceTimeField(g, np.zeros(g.shape + (1,)))
    we, _ = gr.extend(w, G)
    pt, px = we.meta["pad_t"], we.meta["pad_x"]
    c = pt + g.n_t - 1  # index of t = 0
    for k in range(1, g.n_t):
        assert np.array_equal(we.values[c + k, px:px + 10], we.values[c - k, px:px + 10])
    assert np.array_equal(gr.restrict(we).values, w.values)


def test_extend_preserves_equation():
    g = small(1, 16, 12)
    w, G = gr.random_pair(g, 3)
    assert residual_l1(w, G) < 1e-10
    we, Ge = gr.extend(w, G)
    assert np.abs(gr.weak_residual(we, Ge).values).max() < 1e-9


def test_extend_residual_factor_two():
    g = small(1, 16, 12)
    w, G = gr.random_pair(g, 5)
    rng = np.random.default_rng(0)
    t, x = g.mesh()
    noise = rng.normal(size=g.shape) * np.sin(np.pi * x) * 0.01
    noise[0] = 0.0  # keep w(-t0) = 0
    w = w.with_values(w.values + noise)
    base = residual_l1(w, G)
    we, Ge = gr.extend(w, G)
    assert residual_l1(we, Ge) <= 2 * base * (1 + 1e-12)
    r = gr.weak_residual(we, Ge).values * we.grid.cell
    for _ in range(20):
        xi = random_xi(we.grid, rng)
        assert abs(np.sum(r * xi)) <= 2 * base * np.abs(xi).max() * (1 + 1e-12)


def test_extend_mismatched_grids():
    w, _ = gr.preset_pair(small(1, 12, 10), "smooth")
    _, G = gr.preset_pair(small(1, 14, 10), "smooth")
    with pytest.raises(ValueError):
        gr.extend(w, G)


def test_gradient_of_linear():
    g = small(2, 9, 5)
    t, x, y = g.mesh()
    w = SpaceTimeField(g, (2 * x - 3 * y) * np.ones(g.shape))
    d = gr.gradient(w).values[:, 1:-1, 1:-1]
    assert np.allclose(d[..., 0], 2) and np.allclose(d[..., 1], -3)


@pytest.mark.parametrize("m", [1, 2])
def test_laplacian_of_square(m):
    errs = []
    for n in (17, 33):
        g = base_grid(m, n, 4, 1.0 / (n - 1), 0.1)
        mesh = g.mesh()
        w = SpaceTimeField(g, sum(x ** 2 for x in mesh[1:]) * np.ones(g.shape))
        lap = gr.divergence(gr.gradient(w)).values
        inner = (slice(None),) + (slice(2, -2),) * m
        errs.append(np.abs(lap[inner] - 2 * m).max())
    assert errs[0] < 1e-10 and errs[1] < 1e-10


def test_divergence_needs_vector():
    w, _ = gr.preset_pair(small(2, 8, 6), "smooth")
    with pytest.raises(ValueError):
        gr.divergence(w)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.sampled_from([1, 2]))
def test_summation_by_parts(seed, m):
    rng = np.random.default_rng(seed)
    g = small(m, 9, 5)
    inner = (slice(None),) + (slice(1, -1),) * m
    wv = np.zeros(g.shape)
    wv[inner] = rng.normal(size=wv[inner].shape)
    Gv = np.zeros(g.shape + (m,))
    Gv[inner] = rng.normal(size=Gv[inner].shape)
    w, G = SpaceTimeField(g, wv), SpaceTimeField(g, Gv)
    W = gr.weights(g)
    a = np.sum(W[..., None] * gr.gradient(w).values * Gv)
    b = np.sum(W * wv * gr.divergence(G).values)
    assert abs(a + b) <= 1e-12 * (abs(a) + abs(b) + 1)


def test_weighted_mean_examples():
    g = small(2, 8, 6)
    f = SpaceTimeField(g, np.full(g.shape, 3.25))
    assert gr.weighted_mean(f, np.ones(g.shape)) == 3.25
    ind = np.zeros(g.shape)
    ind[:, :4] = 1
    W = gr.weights(g)
    f = SpaceTimeField(g, ind)
    assert gr.weighted_mean(f, np.ones(g.shape)) == pytest.approx((W * ind).sum() / W.sum(), rel=1e-14)
    rng = np.random.default_rng(1)
    f = SpaceTimeField(g, rng.normal(size=g.shape))
    E = rng.random(g.shape) < 0.3
    assert gr.weighted_mean(f, E) == pytest.approx((W * E * f.values).sum() / (W * E).sum(), rel=1e-12)


def test_weighted_mean_errors():
    g = small()
    f = SpaceTimeField(g, np.ones(g.shape))
    with pytest.raises(ValueError, match="degenerate weight"):
        gr.weighted_mean(f, np.zeros(g.shape))
    with pytest.raises(ValueError):
        gr.weighted_mean(f, -np.ones(g.shape))


def test_modular_integral_examples():
    phi = PowerNFunction(2)
    g = base_grid(2, 11, 11, 0.1, 0.1)
    assert gr.modular_integral(SpaceTimeField(g, np.zeros(g.shape)), phi) == 0
    assert gr.modular_integral(SpaceTimeField(g, np.ones(g.shape)), phi) == pytest.approx(0.5, rel=1e-12)
    f = SpaceTimeField(g, np.random.default_rng(2).normal(size=g.shape))
    vals = [gr.modular_integral(f.with_values(lam * f.values), phi) for lam in (0, 0.5, 1, 2)]
    assert vals == sorted(vals)


def test_ptf_roundtrip(tmp_path):
    g = small(2, 8, 6)
    w, G = gr.random_pair(g, 9)
    for f, name in ((w, "w.ptf"), (G, "G.ptf")):
        path = tmp_path / name
        gr.write_ptf(path, f)
        back = gr.read_ptf(path)
        assert back.grid.shape == g.shape and np.array_equal(back.values, f.values)
    (tmp_path / "bad.ptf").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        gr.read_ptf(tmp_path / "bad.ptf")


def test_check_boundary():
    g = small(1, 12, 8)
    w, _ = gr.preset_pair(g, "smooth")
    gr.check_boundary(w)
    with pytest.raises(ValueError):
        gr.check_boundary(w.with_values(w.values + 1))
