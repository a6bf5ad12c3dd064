import numpy as np
import pytest
from scipy import ndimage

from paratrunc import whitney as wh
from paratrunc.grid import base_grid
from paratrunc.maximal import ParabolicCylinder


def brute_distance(O, grid, alpha):
    t = grid.times()
    xs = [grid.coords(i) for i in range(grid.m)]
    pts = np.argwhere(np.ones(grid.shape, dtype=bool))
    tz = t[pts[:, 0]]
    xz = np.stack([xs[i][pts[:, i + 1]] for i in range(grid.m)], axis=-1)
    out_ = ~O.ravel()
    D = np.zeros(grid.shape)
    for k, z in enumerate(pts):
        if not O[tuple(z)]:
            continue
        dt = np.sqrt(np.abs(tz[out_] - tz[k]) / alpha)
        dx = np.linalg.norm(xz[out_] - xz[k], axis=-1)
        D[tuple(z)] = np.maximum(dt, dx).min()
    return D


def ball_set(grid, R, alpha):
    mesh = grid.mesh()
    tc = 0.5 * (grid.times()[0] + grid.times()[-1])
    xc = [0.5 * (grid.coords(i)[0] + grid.coords(i)[-1]) for i in range(grid.m)]
    d = np.maximum(np.sqrt(np.abs(mesh[0] - tc) / alpha),
                   np.sqrt(sum((mesh[i + 1] - xc[i]) ** 2 for i in range(grid.m))))
    return (d < R) * np.ones(grid.shape, dtype=bool)


def random_set(grid, seed, frac=0.35):
    rng = np.random.default_rng(seed)
    f = ndimage.gaussian_filter(rng.normal(size=grid.shape), 1.5)
    O = f > np.quantile(f, 1 - frac)
    for a in range(O.ndim):
        ax = np.moveaxis(O, a, 0)
        ax[0] = ax[-1] = False
    return O


def test_empty_cover():
    g = base_grid(1, 16, 16, 1 / 15, 1 / 225)
    wc = wh.cover(np.zeros(g.shape, dtype=bool), g, 1.0)
    assert len(wc) == 0
    d = wh.diagnostics(wc)
    assert d["w1"] and d["overlap_max"] == 0


def test_touching_boundary_rejected():
    g = base_grid(1, 16, 16, 1 / 15, 1 / 225)
    O = np.zeros(g.shape, dtype=bool)
    O[0, 5] = True
    with pytest.raises(ValueError):
        wh.cover(O, g, 1.0)


def test_distance_matches_brute_force():
    g = base_grid(1, 24, 20, 1 / 23, 1 / 23 ** 2)
    O = random_set(g, 2)
    assert np.allclose(wh.distance_to_complement(O, g, 1.0), brute_distance(O, g, 1.0), rtol=1e-12)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_ball_distance_ratios(alpha):
    n = 65
    g = base_grid(1, n, n, 1 / (n - 1), 0.4 / (n - 1))
    O = ball_set(g, 0.3, alpha)
    wc = wh.cover(O, g, alpha)
    D = brute_distance(O, g, alpha)
    for c, r in zip(wc.centers, wc.radii):
        assert 8 <= D[tuple(c)] / r <= 32
    d = wh.diagnostics(wc)
    assert d["w1"] and d["w2"] and d["w3"] and d["w4"] and d["p1"]


def test_random_set_half_union():
    g = base_grid(2, 16, 16, 1 / 15, 1 / 225)
    O = random_set(g, 7, frac=0.4)
    wc = wh.cover(O, g, 1.0)
    assert np.array_equal(wc.half_union(), O)
    d = wh.diagnostics(wc)
    assert d["w1"] and d["w2"] and d["w4"]
    assert d["p4_err"] < 1e-12
    assert d["neighbors_max"] <= 120 ** 4 and d["overlap_max"] <= 120 ** 4


def test_partition_sums_to_one():
    n = 24
    g = base_grid(2, n, n, 1 / (n - 1), 1 / (n - 1) ** 2)
    O = random_set(g, 3)
    wc = wh.cover(O, g, 1.0)
    total = np.zeros(g.shape)
    for j in range(len(wc)):
        total[wc.boxes[j]] += wc.weights[j]
    assert np.abs(total[O] - 1).max() < 1e-12
    assert np.all(total[~O] == 0)
    d = wh.diagnostics(wc)
    assert d["p1"] and d["p4_local_err"] < 1e-12
    assert np.isfinite(d["p3_max"])


def test_single_cylinder_weight():
    n = 65
    g = base_grid(1, n, n, 1 / (n - 1), 0.4 / (n - 1))
    wc = wh.cover(ball_set(g, 0.3, 1.0), g, 1.0)
    # the largest cylinder overlaps nothing on its half scaling in this set
    j = int(np.argmax(wc.radii))
    half = wc.cylinder(j, 0.5).node_mask(g) & wc.O
    others = np.zeros(g.shape)
    for k in wc.neighbors[j]:
        if k != j:
            others += wc.rho_full(k)
    rho = wc.rho_full(j)
    clean = half & (others == 0)
    assert clean.any() and np.all(rho[clean] == 1.0)


def test_deterministic():
    g = base_grid(2, 16, 16, 1 / 15, 1 / 225)
    O = random_set(g, 5)
    a, b = wh.cover(O, g, 1.0), wh.cover(O, g, 1.0)
    assert np.array_equal(a.centers, b.centers) and np.array_equal(a.radii, b.radii)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def test_intersection_measure():
    a = ParabolicCylinder(0.0, (0.0, 0.0), 1.0, 1.0)
    assert wh.intersection_measure(a, a) == pytest.approx(a.measure())
    b = ParabolicCylinder(0.5, (1.0, 0.0), 1.0, 1.0)
    # lens of two unit discs at distance 1 times the time overlap 1.5
    lens = 2 * np.arccos(0.5) - 0.5 * np.sqrt(3)
    assert wh.intersection_measure(a, b) == pytest.approx(1.5 * lens)
    c = ParabolicCylinder(5.0, (0.0, 0.0), 1.0, 1.0)
    assert wh.intersection_measure(a, c) == 0


def test_smoothstep():
    u = np.linspace(0, 1, 101)
    s = wh.smoothstep(u, 0.25, 0.75)
    assert np.all(s[u <= 0.25] == 1) and np.all(s[u >= 0.75] == 0)
    assert np.all(np.diff(s) <= 0)
