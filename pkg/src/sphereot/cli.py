"""Command-line front end: ``sphereot {solve,reflector,recover-map,verify,export-mesh}``.

Everything is driven by one JSON config (see ``DEFAULTS``); flags override
scalar fields.  Outputs are deterministic and carry the config hash and the
tolerances in effect.  Exit codes: 0 ok, 1 config error, 2 infeasible,
3 no finite-cost plan, 4 non-convergence, 5 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import kernels as K
from . import maps
from . import reflector as RF
from . import transport as TR
from .sphere import DiscreteMeasure, make_grid, unit

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INFEASIBLE = 2
EXIT_NO_FINITE_PLAN = 3
EXIT_NO_CONVERGENCE = 4
EXIT_VERIFY_FAILED = 5

DEFAULTS = {
    "kernel": "log",
    "dimension": 2,
    "source": {"grid": "fibonacci", "n": 200, "seed": 0, "intensity": "uniform"},
    "target": {"generator": "tetrahedron"},
    "tolerances": {
        "feasibility": TR.FEAS_TOL,
        "optimality": TR.OPT_TOL,
        "geometry": 1e-12,
        "tie": 1e-9,
        "match": 1e-8,
        "reflector": 1e-3,
        "roundtrip": 1e-10,
        "snell": 1e-8,
        "bridge": 5e-3,
    },
    "max_iter": 5000,
    "rays": 1000,
    "output_dir": "out",
    "plan": None,
    "reflector_file": None,
    "verify": {"pairs": 1000, "grid": 1000, "seed": 0, "bridge_atoms": 4000, "bridge_reflector_tol": 5e-3},
}


class ConfigError(Exception):
    pass


# -- config -------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _set_path(cfg: dict, dotted: str, raw: str):
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    if isinstance(val, (dict, list)):
        raise ConfigError(f"--set only overrides scalar fields ({dotted})")
    node = cfg
    keys = dotted.split(".")
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    if isinstance(node.get(keys[-1]), dict):
        raise ConfigError(f"{dotted} is a section, not a scalar")
    node[keys[-1]] = val


def config_hash(cfg: dict) -> str:
    """Hash of every setting that can change the numbers (output location excluded)."""
    body = {k: v for k, v in cfg.items() if k != "output_dir"}
    canon = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def load_config(args) -> tuple[dict, Path]:
    base_dir = Path.cwd()
    user = {}
    if args.config:
        path = Path(args.config)
        try:
            user = json.loads(path.read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        base_dir = path.resolve().parent
    cfg = _merge(DEFAULTS, user)
    flag_map = {"kernel": "kernel", "dimension": "dimension", "output_dir": "output_dir",
                "seed": "source.seed", "n": "source.n", "tol": "tolerances.reflector",
                "max_iter": "max_iter", "plan": "plan", "reflector_file": "reflector_file"}
    for attr, dotted in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            _set_path(cfg, dotted, json.dumps(val))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(cfg, key.strip(), raw)
    validate(cfg, base_dir)
    return cfg, base_dir


def validate(cfg: dict, base_dir: Path):
    try:
        K.kernel_from_name(str(cfg["kernel"]))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if cfg["dimension"] not in (1, 2):
        raise ConfigError("dimension must be 1 or 2")
    for name, tol in cfg["tolerances"].items():
        if not isinstance(tol, (int, float)) or not tol > 0:
            raise ConfigError(f"tolerance {name} must be positive")
    if not isinstance(cfg["max_iter"], int) or cfg["max_iter"] < 1:
        raise ConfigError("max_iter must be a positive integer")
    for side in ("source", "target"):
        spec = cfg[side]
        if not isinstance(spec, dict):
            raise ConfigError(f"{side} must be an object")
        if isinstance(spec.get("atoms"), str) and not (base_dir / spec["atoms"]).is_file():
            raise ConfigError(f"{side} atom file {spec['atoms']!r} not found")
    for key in ("plan", "reflector_file"):
        if cfg.get(key) and not (base_dir / cfg[key]).is_file():
            raise ConfigError(f"{key} file {cfg[key]!r} not found")


# -- inputs -------------------------------------------------------------------


def intensity_values(name: str, nodes: np.ndarray) -> np.ndarray:
    z = nodes[:, -1]
    if name == "uniform":
        return np.ones(len(nodes))
    if name == "upper":
        return (z >= 0).astype(float)
    if name == "linear":
        return 1.0 + z
    raise ConfigError(f"unknown intensity {name!r}; expected uniform, upper or linear")


def _platonic(name: str, dim: int) -> np.ndarray:
    if name == "antipodal":
        e = np.zeros(dim + 1)
        e[-1] = 1.0
        return np.array([e, -e])
    if dim != 2:
        raise ConfigError(f"generator {name!r} needs dimension 2")
    if name == "tetrahedron":
        return np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / math.sqrt(3.0)
    if name == "octahedron":
        return np.vstack([np.eye(3), -np.eye(3)])
    raise ConfigError(f"unknown generator {name!r}")


def _grid_of(spec: dict, dim: int):
    try:
        return make_grid(spec.get("grid", "fibonacci"), int(spec.get("n", 200)), int(spec.get("seed", 0)), dim)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def load_measure(spec: dict, dim: int, base_dir: Path) -> DiscreteMeasure:
    try:
        if "atoms" in spec:
            data = spec["atoms"]
            if isinstance(data, str):
                data = json.loads((base_dir / data).read_text())
            m = DiscreteMeasure.from_dict(data)
        elif "grid" in spec:
            g = _grid_of(spec, dim)
            m = g.as_measure(intensity_values(spec.get("intensity", "uniform"), g.nodes))
        elif "generator" in spec:
            gen = spec["generator"]
            if gen == "random":
                rng = np.random.default_rng(int(spec.get("seed", 0)))
                pts = unit(rng.standard_normal((int(spec.get("n", 8)), dim + 1)))
            elif gen == "circle":
                if dim != 1:
                    raise ConfigError("generator 'circle' needs dimension 1")
                t = 2 * np.pi * np.arange(int(spec.get("n", 4))) / int(spec.get("n", 4))
                pts = np.column_stack((np.cos(t), np.sin(t)))
            else:
                pts = _platonic(gen, dim)
            w = spec.get("weights")
            w = np.full(len(pts), 1.0 / len(pts)) if w is None else np.asarray(w, float)
            m = DiscreteMeasure(pts, w)
        else:
            raise ConfigError("measure needs one of 'atoms', 'grid' or 'generator'")
    except (KeyError, TypeError, ValueError, OSError) as e:
        raise ConfigError(f"bad measure spec: {e}") from e
    if m.dim != dim:
        raise ConfigError(f"measure lives on S^{m.dim} but dimension is {dim}")
    return m


# -- outputs ------------------------------------------------------------------


class Writer:
    def __init__(self, cfg: dict, base_dir: Path):
        self.dir = Path(cfg["output_dir"])
        if not self.dir.is_absolute():
            self.dir = Path.cwd() / self.dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.meta = {"config_hash": config_hash(cfg), "tolerances": cfg["tolerances"]}

    def json(self, name: str, payload: dict) -> Path:
        body = dict(payload)
        body["meta"] = self.meta
        path = self.dir / name
        path.write_text(json.dumps(_plain(body), indent=1, sort_keys=True) + "\n")
        return path

    def _header(self) -> str:
        return f"config_hash={self.meta['config_hash']} tolerances={json.dumps(self.meta['tolerances'], sort_keys=True)}"

    def csv(self, name: str, header: list, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# {self._header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        path = self.dir / name
        path.write_text(buf.getvalue())
        return path

    def text(self, name: str, body: str) -> Path:
        path = self.dir / name
        path.write_text(body)
        return path


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def _log(msg: str):
    print(msg, file=sys.stderr)


def _monotonicity(k, X, Y, tol) -> dict:
    L = len(X)
    max_n = 2
    for s in (3, 4):
        if math.comb(L, s) <= 300_000:
            max_n = s
    rep = TR.check_cyclical_monotonicity(k, X, Y, max_n=max_n, tol=tol)
    d = rep.to_dict()
    d["max_n"] = max_n
    return d


# -- commands -----------------------------------------------------------------


def cmd_solve(cfg, base_dir) -> int:
    k = K.kernel_from_name(cfg["kernel"])
    adm = K.admissibility(k)
    mu = load_measure(cfg["source"], cfg["dimension"], base_dir)
    nu = load_measure(cfg["target"], cfg["dimension"], base_dir)
    res = TR.solve_kantorovich(k, mu, nu)
    out = Writer(cfg, base_dir)
    out.json("plan.json", {**res.to_dict(), "admissibility": adm.to_dict(),
                           "marginal_errors": list(res.plan.marginal_errors()),
                           "min_distance": res.plan.min_distance()})
    rows = [("u", i, x) for i, x in enumerate(res.duals.u)] + [("v", j, x) for j, x in enumerate(res.duals.v)]
    out.csv("duals.csv", ["side", "index", "value"], rows)
    X, Y = res.plan.support_points()
    mono = _monotonicity(k, X, Y, cfg["tolerances"]["optimality"])
    out.json("monotonicity.json", mono)
    print(f"cost {res.cost!r} pairs {len(res.plan)} monotone {mono['monotone']}")
    return EXIT_OK


def _reflector_inputs(cfg, base_dir):
    dim = cfg["dimension"]
    grid = _grid_of(cfg["source"], dim)
    I = intensity_values(cfg["source"].get("intensity", "uniform"), grid.nodes)
    nu = load_measure(cfg["target"], dim, base_dir)
    if nu.total_mass <= 0:
        raise ConfigError("target has no mass")
    return grid, I, nu.normalized()


def cmd_reflector(cfg, base_dir) -> int:
    grid, I, nu = _reflector_inputs(cfg, base_dir)
    out = Writer(cfg, base_dir)
    tol = cfg["tolerances"]["reflector"]
    try:
        sol = RF.solve_weak_reflector(nu, grid, I, tol=tol, max_iter=cfg["max_iter"])
    except RF.ConvergenceError as e:
        out.json("reflector_report.json", {"converged": False, "message": str(e),
                                           "residuals": e.residuals})
        _log(str(e))
        return EXIT_NO_CONVERGENCE
    spec = sol.spec
    out.json("reflector.json", {**spec.to_dict(), "iterations": sol.iterations, "residual": sol.residual})
    out.csv("cells.csv", ["i", "p_i", "G_i", "nu_i", "rel_err"], sol.report_rows())
    out.text("reflector.obj", RF.mesh_obj(spec, grid.nodes, header=out._header()))
    rays = make_grid("random_uniform", max(4, int(cfg["rays"])), seed=int(cfg["source"].get("seed", 0)),
                     dim=cfg["dimension"]).nodes
    rt = RF.ray_trace_verify(spec, rays, cfg["tolerances"]["tie"])
    out.json("raytrace.json", {**rt.to_dict(), "pass": rt.max_deviation <= cfg["tolerances"]["snell"]})
    out.json("reflector_report.json", {"converged": True, "residuals": sol.rel_errors()})
    print(f"reflector: {len(spec)} paraboloids, residual {sol.residual:.3e}, "
          f"ray deviation {rt.max_deviation:.3e}")
    return EXIT_OK


def _plan_and_duals(cfg, base_dir, k, mu, nu):
    if cfg.get("plan"):
        try:
            data = json.loads((base_dir / cfg["plan"]).read_text())
            plan = TR.plan_from_dict(data, mu, nu)
        except (OSError, ValueError, KeyError) as e:
            raise ConfigError(f"cannot load plan: {e}") from e
        v = data.get("dual_v")
        return plan, (np.asarray(v, float) if v is not None else None)
    res = TR.solve_kantorovich(k, mu, nu)
    return res.plan, res.duals.v


def cmd_recover_map(cfg, base_dir) -> int:
    k = K.kernel_from_name(cfg["kernel"])
    mu = load_measure(cfg["source"], cfg["dimension"], base_dir)
    nu = load_measure(cfg["target"], cfg["dimension"], base_dir)
    _, v = _plan_and_duals(cfg, base_dir, k, mu, nu)
    if v is None or len(v) != len(nu):
        raise ConfigError("plan file has no usable dual_v")
    tie = cfg["tolerances"]["tie"]
    psi = maps.potential_from_duals(k, nu.points, v)
    T = maps.recover_map(k, psi, mu.points, tie)
    psi_c = TR.c_transform(k, psi, mu.points)
    comp, used = maps.composition_error(T, lambda P: maps.inverse_map(k, psi_c, P, tie))
    push = maps.verify_pushforward(T, mu, nu, cfg["tolerances"]["match"])
    out = Writer(cfg, base_dir)
    d = mu.dim + 1
    header = [f"x{i}" for i in range(d)] + [f"Tx{i}" for i in range(d)] + ["argmin", "differentiable"]
    out.csv("map.csv", header, ([*x, *tx, j, ok] for x, tx, j, ok in T.rows()))
    out.json("map_summary.json", {"delta": T.delta, "n_flagged": T.n_flagged,
                                  "branch_error": T.branch_error,
                                  "max_composition_error": comp, "composition_points": used,
                                  **push.to_dict()})
    print(f"map: delta {T.delta:.6g}, flagged {T.n_flagged}, unmatched {push.unmatched_mass:.3g}")
    return EXIT_OK


def cmd_export_mesh(cfg, base_dir) -> int:
    if not cfg.get("reflector_file"):
        raise ConfigError("export-mesh needs reflector_file")
    try:
        spec = RF.ReflectorSpec.from_dict(json.loads((base_dir / cfg["reflector_file"]).read_text()))
    except (OSError, ValueError, KeyError) as e:
        raise ConfigError(f"cannot load reflector: {e}") from e
    grid = _grid_of(cfg["source"], cfg["dimension"])
    if spec.directions.shape[1] != grid.nodes.shape[1]:
        raise ConfigError("reflector and grid dimensions differ")
    out = Writer(cfg, base_dir)
    out.text("reflector.obj", RF.mesh_obj(spec, grid.nodes, header=out._header()))
    print(f"mesh: {len(grid)} vertices")
    return EXIT_OK


# -- verification suites ------------------------------------------------------


def _suite_admissibility(k, cfg, ctx):
    rep = K.admissibility(k)
    return {"pass": rep.ok, **rep.to_dict()}


def _random_pairs(rng, n, dim, lo=0.1):
    X = np.empty((0, dim + 1))
    Y = np.empty((0, dim + 1))
    while len(X) < n:
        a = unit(rng.standard_normal((n, dim + 1)))
        b = unit(rng.standard_normal((n, dim + 1)))
        ok = np.linalg.norm(a - b, axis=1) >= lo
        X, Y = np.vstack([X, a[ok]]), np.vstack([Y, b[ok]])
    return X[:n], Y[:n]


def _suite_roundtrip(k, cfg, ctx):
    rng = np.random.default_rng(cfg["verify"]["seed"])
    X, Y = _random_pairs(rng, int(cfg["verify"]["pairs"]), cfg["dimension"])
    Yr = K.inverse_map_M(k, K.tangential_gradient(k, X, Y), X)
    err = float(np.max(np.linalg.norm(Yr - Y, axis=1)))
    return {"pass": err <= cfg["tolerances"]["roundtrip"], "max_error": err, "pairs": len(X)}


def _suite_psi_cc(k, cfg, ctx):
    res = ctx["solve"]()
    mu, nu = res.plan.source, res.plan.target
    psi = maps.potential_from_duals(k, nu.points, res.duals.v)
    psi_c = TR.c_transform(k, psi, mu.points)
    psi_cc = TR.c_transform(k, psi_c, nu.points)
    G = make_grid("random_uniform", int(cfg["verify"]["grid"]), seed=cfg["verify"]["seed"] + 1,
                  dim=cfg["dimension"]).nodes
    a, b = psi(G), psi_cc(G)
    fin = np.isfinite(a) & np.isfinite(b)
    err = float(np.max(np.abs(a[fin] - b[fin]))) if fin.any() else 0.0
    same_inf = bool(np.all(np.isfinite(a) == np.isfinite(b)))
    return {"pass": err <= cfg["tolerances"]["optimality"] and same_inf, "max_error": err,
            "points": len(G)}


def _suite_monotonicity(k, cfg, ctx):
    if cfg.get("plan"):
        mu = load_measure(cfg["source"], cfg["dimension"], ctx["base_dir"])
        nu = load_measure(cfg["target"], cfg["dimension"], ctx["base_dir"])
        plan, _ = _plan_and_duals(cfg, ctx["base_dir"], k, mu, nu)
        origin = "plan file"
    else:
        plan = ctx["solve"]().plan
        origin = "solver"
    X, Y = plan.support_points()
    rep = _monotonicity(k, X, Y, cfg["tolerances"]["optimality"])
    return {"pass": rep["monotone"], "plan": origin, **rep}


def _suite_snell(k, cfg, ctx):
    tol = cfg["tolerances"]["snell"]
    rng = np.random.default_rng(cfg["verify"]["seed"] + 2)
    dim = cfg["dimension"]
    x = unit(rng.standard_normal((1000, dim + 1)))
    n = unit(rng.standard_normal((1000, dim + 1)))
    y = RF.snell_reflect(x, n)
    invol = float(np.max(np.abs(RF.snell_reflect(y, n) - x)))
    # sphere reflector: constant focal function 2 rho0 puts r(y) = -rho0 y
    rho0 = 1.5
    e = np.zeros(dim + 1)
    e[-1] = 1.0
    sphere_err = 0.0
    if dim == 2:
        P = RF.stencil(e, 1e-3)
        r = RF.quasipotential_position(P, np.full(len(P), 2 * rho0), e)
        xs = r / np.linalg.norm(r)
        sphere_err = float(max(np.linalg.norm(r + rho0 * e),
                               np.linalg.norm(RF.snell_reflect(xs, -xs) + xs)))
    grid, I, nu = _reflector_inputs(cfg, ctx["base_dir"])
    # the reflection law holds for any focal parameters, so a coarse grid's last iterate is still traced
    try:
        spec, converged = ctx["reflector"](grid, I, nu).spec, True
    except RF.ConvergenceError as e:
        if e.spec is None:
            raise
        spec, converged = e.spec, False
    rays = unit(rng.standard_normal((int(cfg["rays"]), dim + 1)))
    rt = RF.ray_trace_verify(spec, rays, cfg["tolerances"]["tie"])
    ok = invol <= 1e-14 and sphere_err <= 1e-12 and rt.max_deviation <= tol
    return {"pass": ok, "involution_error": invol, "sphere_error": sphere_err,
            "reflector_converged": converged, **rt.to_dict()}


def _suite_bridge(k, cfg, ctx):
    if k.name != "log":
        return {"pass": True, "skipped": "duality bridge applies to the log kernel only"}
    dim = cfg["dimension"]
    n = int(cfg["verify"]["bridge_atoms"])
    grid = make_grid(cfg["source"].get("grid", "fibonacci"), n, int(cfg["source"].get("seed", 0)), dim)
    I = intensity_values(cfg["source"].get("intensity", "uniform"), grid.nodes)
    nu = load_measure(cfg["target"], dim, ctx["base_dir"]).normalized()
    sol = RF.solve_weak_reflector(nu, grid, I, tol=cfg["verify"]["bridge_reflector_tol"],
                                  max_iter=cfg["max_iter"])
    u, v_refl = RF.dual_pair(sol.spec, grid.nodes)
    C = K.cost_matrix(k, grid.nodes, nu.points)
    slack = float(np.max(u[:, None] + v_refl[None, :] - C))
    res = TR.solve_kantorovich(k, grid.as_measure(I), nu)
    d = res.duals.v - v_refl
    dev = float((d.max() - d.min()) / 2)
    return {"pass": dev <= cfg["tolerances"]["bridge"] and slack <= cfg["tolerances"]["optimality"],
            "max_deviation": dev, "max_dual_slack": slack, "atoms": n}


SUITES = [
    ("admissibility", _suite_admissibility),
    ("m_roundtrip", _suite_roundtrip),
    ("psi_cc", _suite_psi_cc),
    ("monotonicity", _suite_monotonicity),
    ("snell", _suite_snell),
    ("duality_bridge", _suite_bridge),
]


def run_suites(cfg, base_dir) -> dict:
    k = K.kernel_from_name(cfg["kernel"])
    cache = {}

    def solve():
        if "solve" not in cache:
            mu = load_measure(cfg["source"], cfg["dimension"], base_dir)
            nu = load_measure(cfg["target"], cfg["dimension"], base_dir)
            cache["solve"] = TR.solve_kantorovich(k, mu, nu)
        return cache["solve"]

    def refl(grid, I, nu):
        if "refl" not in cache:
            cache["refl"] = RF.solve_weak_reflector(nu, grid, I, tol=cfg["tolerances"]["reflector"],
                                                    max_iter=cfg["max_iter"])
        return cache["refl"]

    ctx = {"solve": solve, "reflector": refl, "base_dir": base_dir}
    results = {}
    for name, fn in SUITES:
        if name != "admissibility" and not results["admissibility"]["pass"]:
            results[name] = {"pass": False, "skipped": "kernel is not admissible"}
            continue
        try:
            results[name] = fn(k, cfg, ctx)
        except ConfigError:
            raise
        except (ValueError, RuntimeError, FloatingPointError) as e:
            results[name] = {"pass": False, "error": f"{type(e).__name__}: {e}"}
    return results


def cmd_verify(cfg, base_dir) -> int:
    results = run_suites(cfg, base_dir)
    ok = all(r["pass"] for r in results.values())
    Writer(cfg, base_dir).json("verify.json", {"suites": results, "all_pass": ok})
    for name, r in results.items():
        print(f"{'PASS' if r['pass'] else 'FAIL'} {name}")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


COMMANDS = {
    "solve": cmd_solve,
    "reflector": cmd_reflector,
    "recover-map": cmd_recover_map,
    "verify": cmd_verify,
    "export-mesh": cmd_export_mesh,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphereot", description="Optimal transport on the sphere.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--output-dir", dest="output_dir")
        s.add_argument("--kernel")
        s.add_argument("--dimension", type=int)
        s.add_argument("--seed", type=int, help="source seed")
        s.add_argument("--n", type=int, help="source grid size")
        s.add_argument("--tol", type=float, help="reflector mass tolerance")
        s.add_argument("--max-iter", dest="max_iter", type=int)
        s.add_argument("--plan", help="plan JSON to check instead of solving")
        s.add_argument("--reflector-file", dest="reflector_file")
        s.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scalar config field by dotted path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, base_dir = load_config(args)
        return COMMANDS[args.command](cfg, base_dir)
    except ConfigError as e:
        _log(f"config error: {e}")
        return EXIT_CONFIG
    except TR.InfeasibleError as e:
        _log(f"infeasible: {e}")
        return EXIT_INFEASIBLE
    except TR.NoFinitePlanError as e:
        _log(f"no finite-cost plan: {e}")
        return EXIT_NO_FINITE_PLAN
    except RF.ConvergenceError as e:
        _log(str(e))
        return EXIT_NO_CONVERGENCE
    except K.DomainError as e:
        _log(f"kernel cannot be used here: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
