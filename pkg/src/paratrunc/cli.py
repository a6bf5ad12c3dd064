"""Command-line front end.

Exit codes: 0 success, 1 invalid configuration, 2 numeric failure.
Reports are JSON with sorted keys; the same arguments give byte-identical
output.  Every measured constant in a report has an entry in ``anchors``
naming the inequality it instantiates.
"""
import argparse
import csv
import json
import os
import struct
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, caloric, maximal, orlicz, poincare, truncation, whitney
from .grid import (SpaceTimeField, as_vector, base_grid, boundary_max, gradient_array, preset_pair, read_csv,
                   read_ptf, weak_residual, write_ptf)

SCHEMA = "paratrunc-report/1"

ANCHORS = {
    "prop_a_exact": "w_lam = w off the bad set",
    "c_b": "sup M^alpha(grad w_lam) <= c lam",
    "c_c": "int phi(|grad(w_lam - w)|) <= c (int_O phi(|grad w|) + phi(lam)|O|)",
    "c_c_l1": "int |grad(w_lam - w)| <= c (int_O |grad w| + lam |O|)",
    "c_d_flux": "alpha N^alpha(dt w_lam) <= c lam (flux bound on good cylinders)",
    "c_d_family": "alpha N^alpha(dt w_lam) <= c lam (test-family lower bound)",
    "c_e": "|w_lam(z1) - w_lam(z2)| <= c lam d_alpha(z1, z2)",
    "ibp_residual": "<dt w, w_lam eta> = 1/2 int (w_lam^2 - 2 w w_lam) eta' + int_O dt w_lam (w_lam - w) eta",
    "c_w_wj": "mean_{3/4 Q_j} |w - w_j| <= c r_j lam",
    "c_wj_wk": "sum_{j in A_k} |w_j - w_k| / r_j <= c lam",
    "poincare_weak": "mean_Q |a - <a>_rho| / r <= c mean_Q |grad a| + c alpha N_Q(dt a)",
    "poincare_modular": "mean_Q phi(|a - <a>_rho| / r) <= c mean_Q phi(|grad a|) + c phi(alpha mean_Q |G|)",
    "energy_ratio": "sup_t mean_B |w|^2/|I| + mean_Q |V(grad u) - V(grad h)|^2 <= c0 mean_Q phi(|grad u|) + phi*(|G|)",
    "good_lambda_bound": "|{M(grad w) > lam}| + |{M(G) > phi'(lam)}| <= c phi(gamma) |Q| / (m0 phi(lam))",
    "delta": "|mean_Q -u dt xi + A(grad u) grad xi| <= delta (mean phi(|grad u|) + mean phi*(|H|) + phi(|grad xi|_inf))",
    "D_rel": "D1 + D2 <= eps phi(gamma)",
    "interpolation": "L^b(L^a) <= sup L^2 ^((b-2)/b) * L^2(L^1) ^(2/b)",
    "overlap_max": "each point lies in at most c of the sets 4 Q_j",
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _dump(report, path):
    report = dict(report)
    report.setdefault("schema", SCHEMA)
    report.setdefault("version", __version__)
    keys = [k for k in ANCHORS if k in report]
    report["anchors"] = {k: ANCHORS[k] for k in keys}
    text = json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _threads(args):
    n = getattr(args, "threads", None)
    if n is None:
        env = os.environ.get("PARATRUNC_THREADS")
        try:
            n = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"PARATRUNC_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _pmap(fn, items, threads):
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


def _input(path):
    if not Path(path).is_file():
        raise ConfigError(f"input file not found: {path}")
    try:
        return read_ptf(path)
    except (ValueError, struct.error) as e:
        raise ConfigError(f"{path}: {e}")


def _phi(spec):
    try:
        return orlicz.from_spec(spec)
    except (ValueError, OSError) as e:
        raise ConfigError(str(e))


def _alpha(value, lam, phi):
    if value == "auto":
        if lam is None:
            raise ConfigError("--alpha auto needs a level lambda")
        return lam / float(phi.dphi(lam))
    try:
        a = float(value)
    except ValueError:
        raise ConfigError(f"bad alpha {value!r}")
    if not a > 0:
        raise ConfigError("alpha must be positive")
    return a


def _grid_args(p):
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--n", type=int, default=64, help="space nodes per axis")
    p.add_argument("--nt", type=int, default=64, help="time nodes")
    p.add_argument("--h", type=float, default=None, help="mesh width (default 1/(n-1))")
    p.add_argument("--tau", type=float, default=None, help="time step (default h^2)")


def _make_grid(args):
    if args.m not in (1, 2):
        raise ConfigError("m must be 1 or 2")
    h = args.h or 1.0 / (args.n - 1)
    tau = args.tau or h * h
    return base_grid(args.m, (args.n,) * args.m, args.nt, h, tau)


def _g_path(out):
    p = Path(out)
    return str(p.with_name(p.stem + "_G" + p.suffix))


# -- subcommands --------------------------------------------------------------

def cmd_field(args):
    if args.action != "gen" and not args.input:
        raise ConfigError(f"field {args.action} needs an input file")
    if args.action in ("gen", "convert") and not args.out:
        raise ConfigError(f"field {args.action} needs --out")
    if args.action == "gen":
        grid = _make_grid(args)
        w, G = preset_pair(grid, args.preset, args.seed)
        write_ptf(args.out, w)
        write_ptf(args.g_out or _g_path(args.out), G)
        return {"preset": args.preset, "seed": args.seed, "shape": list(grid.shape),
                "residual": float(np.abs(weak_residual(w, G).values).max())}
    if args.action == "convert":
        src = args.input
        if src.endswith(".csv"):
            if args.h is None or args.tau is None:
                raise ConfigError("CSV import needs --h and --tau")
            if not Path(src).is_file():
                raise ConfigError(f"input file not found: {src}")
            f = read_csv(src, args.h, args.tau)
            write_ptf(args.out, f)
        else:
            f = _input(src)
            if f.grid.m != 1 or f.values.ndim != 2:
                raise ConfigError("CSV export is for m = 1 scalar fields")
            np.savetxt(args.out, f.values, delimiter=",", fmt="%.17g")
        return {"converted": src, "out": args.out}
    f = _input(args.input)
    g = f.grid
    rep = {"m": g.m, "shape": list(f.values.shape), "h": g.h, "tau": g.tau, "t0": g.t0,
           "min": float(f.values.min()), "max": float(f.values.max()),
           "l2": float(np.sqrt(np.mean(f.values ** 2))), "boundary_max": boundary_max(f)}
    if args.g:
        rep["residual"] = float(np.abs(weak_residual(f, as_vector(_input(args.g))).values).max())
    return rep


def cmd_maximal(args):
    f = _input(args.field)
    phi = _phi(args.phi)
    alpha = _alpha(args.alpha, args.lam, phi)
    radii = maximal.dyadic_radii(f.grid, alpha)
    rep = {"op": args.op, "alpha": alpha, "radii": radii}
    if args.op == "m":
        M = maximal.m_alpha(f, alpha, radii)
        rep.update(sup=float(M.values.max()), mean=float(M.values.mean()))
        if args.out:
            write_ptf(args.out, M)
    elif args.op == "sharp":
        rep["sup"] = maximal.sharp_alpha(f, alpha, radii, stride=args.stride)
    else:
        G = as_vector(_input(args.g)) if args.g else None
        mode = args.mode
        rep["mode"] = mode
        rep["sup"] = maximal.n_alpha(f, G, alpha, mode, radii, stride=args.stride)
    return rep


def cmd_whitney(args):
    mask = _input(args.mask)
    O = mask.values != 0
    if O.ndim != mask.grid.m + 1:
        raise ConfigError("mask must be a scalar field")
    wc = whitney.cover(O, mask.grid, float(args.alpha))
    out = wc.to_json()
    out["diagnostics"] = whitney.diagnostics(wc) if args.diagnostics else None
    if args.weights:
        wc.save_weights(args.weights)
    if args.out:
        _dump(out, args.out)
    return {"count": len(wc), "overlap_max": wc.overlap_max, "diagnostics": out["diagnostics"]}


def _resolve_lambda(spec, w, G, phi, alpha_arg):
    if spec.startswith("goodlambda:"):
        try:
            m0 = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad lambda spec {spec!r}")
        if m0 < 1:
            raise ConfigError("m0 must be >= 1")
        gl = caloric.good_lambda_select(w, G, phi, m0)
        if gl["sentinel"]:
            raise ConfigError("zero data: good-lambda selection has no level")
        alpha = gl["alpha"] if alpha_arg == "auto" else _alpha(alpha_arg, gl["lam"], phi)
        info = {k: gl[k] for k in ("lam", "alpha", "gamma", "bound", "pigeonhole", "bad_fraction")}
        return gl["lam"], alpha, info
    try:
        lam = float(spec)
    except ValueError:
        raise ConfigError(f"bad lambda spec {spec!r}")
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    return lam, _alpha(alpha_arg, lam, phi), None


def _truncation_report(w, G, lam, alpha, phi, args):
    res = truncation.truncate(w, G, truncation.TruncationParams(lam, alpha, phi=phi))
    rep = truncation.verify_properties(res, phi, n_pairs=args.pairs, n_family=args.family, seed=args.seed)
    resid, energy = truncation.ibp_residual(res)
    rep["ibp_residual"] = resid
    rep["ibp_energy"] = energy
    rep["flags"] = res.flags
    return res, rep


def cmd_truncate(args):
    w = _input(args.w)
    G = as_vector(_input(args.g))
    if w.grid != G.grid:
        raise ConfigError("w and G live on different grids")
    phi = _phi(args.phi)
    lam, alpha, gl = _resolve_lambda(args.lam, w, G, phi, args.alpha)
    res, rep = _truncation_report(w, G, lam, alpha, phi, args)
    rep["phi"] = phi.name
    if gl:
        rep["good_lambda"] = gl
    if args.dump_wlam:
        write_ptf(args.dump_wlam, res.wlam)
    return rep


def cmd_poincare(args):
    if args.battery < 1:
        raise ConfigError("battery size must be >= 1")
    phi = _phi(args.phi) if args.mode == "modular" else None
    seeds = np.random.SeedSequence(args.seed).spawn(args.battery)

    def one(ss):
        rng = np.random.default_rng(ss)
        grid = base_grid(args.m, (args.n,) * args.m, args.nt, 1.0 / (args.n - 1), 0.5 / (args.nt - 1))
        a, G, rho, Q = poincare.random_admissible(grid, rng)
        return poincare.poincare_gap(a, G, Q, rho, args.mode, phi)

    members = _pmap(one, seeds, _threads(args))
    r = np.array([d["ratio"] for d in members])
    key = "poincare_" + args.mode
    return {"mode": args.mode, "phi": phi.name if phi else None, "battery": args.battery,
            "seed": args.seed, key: float(r.max()), "median": float(np.median(r)),
            "max_over_median": float(r.max() / np.median(r)) if np.median(r) > 0 else "inf",
            "c0_max": float(max(d["c0"] for d in members)), "ratios": r}


def _problem_from_cfg(path, phi, args):
    if not Path(path).is_file():
        raise ConfigError(f"problem file not found: {path}")
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"problem file is not JSON: {e}")
    kind = cfg.get("kind", "bump")
    knobs = dict(sigma=args.sigma, q=args.q, theta=args.theta)
    if kind == "heat":
        P = caloric.heat_problem(int(cfg.get("n_space", 33)), int(cfg.get("n_t", 41)),
                                 float(cfg.get("T", 0.1)), p=2.0, m=int(cfg.get("m", 1)))
        P = caloric.CaloricProblem(P.u, P.H, phi, **knobs)
    elif kind == "bump":
        P, _ = caloric.bump_problem(phi, int(cfg.get("n_space", 33)), int(cfg.get("n_t", 41)),
                                    float(cfg.get("eps", 0.01)), m=int(cfg.get("m", 1)),
                                    T=float(cfg.get("T", 0.1)))
        P = caloric.CaloricProblem(P.u, P.H, phi, **knobs)
    elif kind == "files":
        u = _input(cfg["u"])
        H = _input(cfg["H"])
        P = caloric.CaloricProblem(u, H, phi, **knobs)
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    return P, cfg


def cmd_caloric(args):
    if not (0 < args.sigma < 1 and 0 < args.theta < 1):
        raise ConfigError("sigma and theta must lie in (0, 1)")
    if not args.q >= 1 or args.m0 < 1 or not args.tol > 0:
        raise ConfigError("need q >= 1, m0 >= 1 and tol > 0")
    phi = _phi(args.phi)
    P, cfg = _problem_from_cfg(args.problem, phi, args)
    conf = caloric.SolverConfig(tol=args.tol)
    if args.action == "solve":
        h, info = caloric.solve_phi_heat(P, conf)
        if args.out:
            write_ptf(args.out, h)
        en = caloric.energy_check(P.u, h, P.H, phi)
        return {"problem": cfg, "phi": phi.name, "solver": info, "energy_ratio": en["ratio"],
                "energy": en}
    rep = caloric.approximation_experiment(P, conf, m0=args.m0)
    rep["problem"] = cfg
    rep["good_lambda_bound"] = rep["good_lambda"]["bound"]
    rep["interpolation"] = rep["interpolation"]["ratio"]
    return rep


def cmd_sweep(args):
    w = _input(args.w)
    G = as_vector(_input(args.g))
    phi = _phi(args.phi)
    gw = SpaceTimeField(w.grid, np.linalg.norm(gradient_array(w.values, w.grid.h), axis=-1))
    if args.lambdas:
        lams = [float(x) for x in args.lambdas.split(",")]
    else:
        # levels relative to sup M^alpha(grad w), alpha fixed
        a0 = float(args.alpha) if args.alpha != "auto" else 1.0
        s = maximal.m_alpha_sup(gw, a0)
        lams = [s * float(eval_frac(x)) for x in args.relative.split(",")]
    if any(not l > 0 for l in lams):
        raise ConfigError("levels must be positive")
    cols = ["lambda", "alpha", "bad_fraction", "cylinders", "prop_a_exact", "c_b", "c_c",
            "c_d_flux", "c_d_family", "c_e", "ibp_residual"]

    def one(lam):
        alpha = _alpha(args.alpha, lam, phi)
        try:
            _, rep = _truncation_report(w, G, lam, alpha, phi, args)
        except RuntimeError as e:
            # one failed level does not sink the sweep; it is reported as such
            rep = {c: float("nan") for c in cols}
            rep.update({"lambda": lam, "alpha": alpha, "prop_a_exact": False, "error": str(e)})
        return rep

    rows = _pmap(one, lams, _threads(args))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(cols)
            for r in rows:
                wr.writerow([repr(float(r[c])) if not isinstance(r[c], bool) else int(r[c]) for c in cols])
    ok = [r for r in rows if "error" not in r]
    cb = np.array([r["c_b"] for r in ok])
    lam_ok = np.array([r["lambda"] for r in ok])
    rep = {"phi": phi.name, "levels": lams, "rows": rows, "failed": len(rows) - len(ok)}
    if len(ok) > 1 and np.all(cb > 0):
        rep["c_b_spread"] = float(cb.max() / cb.min())
        rep["c_b_slope"] = float(np.polyfit(np.log(lam_ok), np.log(cb), 1)[0])
    return rep


def eval_frac(text):
    """'1/8' -> 0.125; plain floats pass through."""
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return float(text)


# -- parser -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="paratrunc", description="Parabolic Lipschitz truncation toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None, help="worker threads (env PARATRUNC_THREADS)")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    f = sub.add_parser("field", help="generate, convert or inspect PTF1 fields")
    f.add_argument("action", choices=["gen", "convert", "stats"])
    f.add_argument("input", nargs="?", help="input file (convert, stats)")
    f.add_argument("--preset", choices=["zero", "smooth", "spike", "random"], default="smooth")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", help="output file")
    f.add_argument("--g-out", help="flux output for gen (default <out>_G.ptf)")
    f.add_argument("--g", help="flux file for stats (adds the equation residual)")
    f.add_argument("--report", default="-")
    _grid_args(f)

    m = sub.add_parser("maximal", help="parabolic maximal operators")
    m.add_argument("--field", required=True)
    m.add_argument("--g", help="flux field for --op n")
    m.add_argument("--op", choices=["m", "sharp", "n"], default="m")
    m.add_argument("--mode", choices=["flux-bound", "test-family"], default="flux-bound")
    m.add_argument("--alpha", default="1.0")
    m.add_argument("--lambda", dest="lam", type=float, default=None, help="level for --alpha auto")
    m.add_argument("--phi", default="p:2")
    m.add_argument("--radii", choices=["dyadic"], default="dyadic")
    m.add_argument("--stride", type=int, default=4)
    m.add_argument("--out", help="PTF1 output of the maximal field (--op m)")
    m.add_argument("--report", default="-")

    wt = sub.add_parser("whitney", help="Whitney cover of a node set")
    wt.add_argument("--mask", required=True)
    wt.add_argument("--alpha", type=float, required=True)
    wt.add_argument("--out", help="cylinder dump (JSON)")
    wt.add_argument("--weights", help="sparse weights (.npz)")
    wt.add_argument("--diagnostics", action="store_true")
    wt.add_argument("--report", default="-")

    t = sub.add_parser("truncate", help="Lipschitz truncation with measured constants")
    t.add_argument("--w", required=True)
    t.add_argument("--g", required=True)
    t.add_argument("--phi", default="p:2")
    t.add_argument("--lambda", dest="lam", required=True, help="level or goodlambda:<m0>")
    t.add_argument("--alpha", default="auto")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--pairs", type=int, default=10_000)
    t.add_argument("--family", type=int, default=200)
    t.add_argument("--report", default="-")
    t.add_argument("--dump-wlam")

    pc = sub.add_parser("poincare", help="Poincare battery")
    pc.add_argument("--battery", type=int, default=100)
    pc.add_argument("--seed", type=int, default=0)
    pc.add_argument("--mode", choices=["weak", "modular"], default="weak")
    pc.add_argument("--phi", default="p:2")
    pc.add_argument("--m", type=int, default=1)
    pc.add_argument("--n", type=int, default=33)
    pc.add_argument("--nt", type=int, default=33)
    pc.add_argument("--report", default="-")

    c = sub.add_parser("caloric", help="phi-heat solver and approximation experiment")
    c.add_argument("action", choices=["solve", "experiment"])
    c.add_argument("--problem", required=True)
    c.add_argument("--phi", default="p:3")
    c.add_argument("--m0", type=int, default=6)
    c.add_argument("--sigma", type=float, default=0.5)
    c.add_argument("--q", type=float, default=1.0)
    c.add_argument("--theta", type=float, default=0.25)
    c.add_argument("--tol", type=float, default=1e-10)
    c.add_argument("--out", help="PTF1 output of h (solve)")
    c.add_argument("--report", default="-")

    s = sub.add_parser("sweep", help="lambda sweep of the truncation constants")
    s.add_argument("--w", required=True)
    s.add_argument("--g", required=True)
    s.add_argument("--phi", default="p:2")
    s.add_argument("--alpha", default="auto")
    s.add_argument("--lambdas", help="comma separated levels")
    s.add_argument("--relative", default="1/8,1/16,1/32,1/64",
                   help="levels as fractions of sup M^alpha(grad w)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pairs", type=int, default=10_000)
    s.add_argument("--family", type=int, default=200)
    s.add_argument("--csv")
    s.add_argument("--report", default="-")
    return p


_COMMANDS = {"field": cmd_field, "maximal": cmd_maximal, "whitney": cmd_whitney,
             "truncate": cmd_truncate, "poincare": cmd_poincare, "caloric": cmd_caloric,
             "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        _threads(args)
        rep = _COMMANDS[args.cmd](args)
        rep = {"command": args.cmd, **rep}
        _dump(rep, args.report)
    except (ConfigError, FileNotFoundError) as e:
        print(f"paratrunc: invalid configuration: {e}", file=sys.stderr)
        return 1
    except (caloric.SolverError, RuntimeError, FloatingPointError, np.linalg.LinAlgError,
            AssertionError, ValueError) as e:
        print(f"paratrunc: numeric failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
