"""Batch driver: ``slowfast run CONFIG`` and ``slowfast verify CONFIG``.

Configs are INI files::

    [run]
    system = counterexample        ; any name from --list-systems
    eps = 0.1, 0.05, 0.025
    mode = adaptive                ; or fixed_N
    samples = 2048
    seed = 24301
    ; nu_floor, sigma_floor, xi0 default to the system's own values

    [params]                       ; builder parameters, e.g.
    root = 1.0

    [persistence]                  ; persistence systems only
    energies = 0.2, 1.2, 100       ; start, stop, count
    mu = 1e-4

    [manifold]
    points = 41

Exit status: 0 on success, 2 when some run halted on a violated
hypothesis (all artifacts are still written), 1 on errors.
"""

import argparse
import ast
import configparser
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import examples as E
from .errors import ConfigError, SlowFastError
from .norms import DEFAULT_SAMPLES, DEFAULT_SEED, fit_decay

EXIT_OK, EXIT_ERROR, EXIT_HALT = 0, 1, 2
SECTIONS = {"run", "params", "persistence", "manifold"}
RUN_KEYS = {"system", "eps", "mode", "samples", "seed", "nu_floor", "sigma_floor", "xi0", "out",
            "prefactor_power", "max_steps"}


def fmt(x):
    """Round-trip decimal text for floats (17 significant digits)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".17g")


def _json_safe(o):
    if isinstance(o, dict):
        return {str(k): _json_safe(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_safe(v) for v in o]
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, (np.integer, int)):
        return int(o)
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return None if not math.isfinite(o) else float(fmt(o))
    if isinstance(o, complex):
        return [_json_safe(o.real), _json_safe(o.imag)]
    return o


def write_json(path, obj):
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (int, float, np.integer, np.floating, bool, np.bool_)) else v
                    for v in r])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    system: str
    kind: str
    eps: list
    params: dict
    mode: str = "adaptive"
    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    nu_floor: float = None
    sigma_floor: float = None
    xi0: float = None
    out: str = None
    prefactor_power: float = 0.0
    max_steps: int = 60
    energies: tuple = (0.2, 1.2, 100)
    mu: float = 1e-4
    manifold_points: int = 41
    path: str = ""


def _line_of(text, section, key):
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            cur = s[1:-1].strip()
        elif cur == section and s.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return i
    return None


def _literal(raw):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        return raw


def parse_config(path):
    """Read and validate a config file; errors carry line and field."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc.message.splitlines()[0]}",
                          getattr(exc, "lineno", None)) from None

    def err(msg, section, key):
        return ConfigError(msg, _line_of(text, section, key), f"{section}.{key}")

    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", _line_of(text, sec, "") or None, sec)
    if not cp.has_section("run"):
        raise ConfigError("missing [run] section")
    run = cp["run"]
    for k in run:
        if k not in RUN_KEYS:
            raise err("unknown key", "run", k)
    if "system" not in run:
        raise ConfigError("missing key", None, "run.system")
    name = run["system"].strip()
    try:
        spec = E.get_spec(name)
    except KeyError:
        raise err(f"unknown system {name!r}", "run", "system") from None

    def num(key, typ, default):
        if key not in run:
            return default
        try:
            return typ(_literal(run[key]) if typ is not str else run[key])
        except (TypeError, ValueError):
            raise err(f"expected {typ.__name__}", "run", key) from None

    raw = run.get("eps", "").strip()
    if not raw:
        raise err("eps list is empty", "run", "eps")
    try:
        eps = [float(e) for e in raw.replace(",", " ").split()]
    except ValueError:
        raise err("eps must be a list of numbers", "run", "eps") from None
    if any(not (e > 0 and math.isfinite(e)) for e in eps):
        raise err("eps values must be positive", "run", "eps")

    params = {k: _literal(v) for k, v in cp["params"].items()} if cp.has_section("params") else {}
    for k in params:
        if k not in spec.defaults or k == "eps":
            raise err(f"unknown parameter for {name!r}", "params", k)

    cfg = RunConfig(name, spec.kind, eps, params, path=str(path))
    cfg.mode = num("mode", str, "adaptive").strip()
    if cfg.mode not in ("adaptive", "fixed_N"):
        raise err("mode must be adaptive or fixed_N", "run", "mode")
    cfg.samples = num("samples", int, DEFAULT_SAMPLES)
    if cfg.samples < 1:
        raise err("samples must be >= 1", "run", "samples")
    cfg.seed = num("seed", int, DEFAULT_SEED)
    if cfg.seed < 0:
        raise err("seed must be non-negative", "run", "seed")
    cfg.out = run.get("out")
    cfg.prefactor_power = num("prefactor_power", float, 0.0)
    cfg.max_steps = num("max_steps", int, 60)
    rd = spec.refine_defaults
    cfg.nu_floor = num("nu_floor", float, rd.get("nu_floor"))
    cfg.sigma_floor = num("sigma_floor", float, rd.get("sigma_floor"))
    cfg.xi0 = num("xi0", float, rd.get("xi0"))
    if spec.kind != "persistence":
        p = dict(spec.defaults, **params)
        nu0, sigma0 = p.get("nu0"), p.get("sigma0")
        if not 0 < cfg.nu_floor < nu0 - cfg.xi0:
            raise err(f"need 0 < nu_floor < nu0 - xi0 = {nu0 - cfg.xi0:g}", "run", "nu_floor")
        if not 0 < cfg.sigma_floor < sigma0 - cfg.xi0:
            raise err(f"need 0 < sigma_floor < sigma0 - xi0 = {sigma0 - cfg.xi0:g}", "run", "sigma_floor")
    if cp.has_section("persistence"):
        ps = cp["persistence"]
        if "energies" in ps:
            try:
                a, b, n = [float(t) for t in ps["energies"].replace(",", " ").split()]
            except ValueError:
                raise err("energies must be 'start, stop, count'", "persistence", "energies") from None
            if not (b > a and n >= 2 and n == int(n)):
                raise err("energies must satisfy start < stop and count >= 2", "persistence", "energies")
            cfg.energies = (a, b, int(n))
        if "mu" in ps:
            cfg.mu = float(ps["mu"])
            if not cfg.mu > 0:
                raise err("mu must be positive", "persistence", "mu")
    if cp.has_section("manifold") and "points" in cp["manifold"]:
        cfg.manifold_points = int(cp["manifold"]["points"])
        if cfg.manifold_points < 2:
            raise err("points must be >= 2", "manifold", "points")
    return cfg


# ---------------------------------------------------------------------------
# runs


def _build(cfg, eps):
    kw = dict(cfg.params)
    spec = E.get_spec(cfg.system)
    if "samples" in spec.defaults and "samples" not in kw:
        kw["samples"] = cfg.samples
    return E.build(cfg.system, eps=eps, **kw)


def _refine_one(cfg, eps):
    s = _build(cfg, eps)
    axes = E.default_axes(cfg.system, s, **cfg.params)
    if cfg.kind == "general":
        from .refine_general import refine
        chart, certs, rep = refine(s, cfg.nu_floor, cfg.sigma_floor, cfg.xi0, cfg.mode, axes=axes,
                                   samples=cfg.samples, seed=cfg.seed, max_steps=cfg.max_steps)
    else:
        from .refine_ham import refine_ham
        chart, certs, rep = refine_ham(s, cfg.nu_floor, cfg.sigma_floor, cfg.xi0, cfg.mode, axes=axes,
                                       samples=cfg.samples, seed=cfg.seed, max_steps=cfg.max_steps)
    return s, chart, certs, rep


def _map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))  # preserves input order


def _decay_rows(eps, certs):
    return [(eps, c.level, c.delta, c.K, c.C_R, c.xi, c.ok) for c in certs]


def _manifold_rows(cfg, eps, s, chart):
    m = cfg.manifold_points
    if cfg.kind == "general":
        from .sysmodel import chart_eval
        axes = [np.linspace(a, b, m) for a, b in s.domain_V]
        w = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, s.d_w)
        z = chart_eval(chart, w)
        return [(eps,) + tuple(wi) + tuple(zi) for wi, zi in zip(w, z)]
    # image of z+ = 0 in the original coordinates
    axes = [np.linspace(a, b, m) for a, b in s.domain_V]
    w = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, s.dw)
    W, Z = chart.transform(w, np.zeros((len(w), s.dz)))
    return [(eps,) + tuple(a) + tuple(b) + tuple(c) for a, b, c in zip(w, W, Z)]


def _manifold_header(cfg, s):
    if cfg.kind == "general":
        return ["eps"] + [f"w{i + 1}" for i in range(s.d_w)] + [f"zeta{i + 1}" for i in range(s.d_z)]
    d, e = s.d_W, s.d_Z
    names = [f"u{i + 1}" for i in range(d)] + [f"v{i + 1}" for i in range(d)]
    fast = [f"x{i + 1}" for i in range(e)] + [f"y{i + 1}" for i in range(e)]
    return ["eps"] + [n + "_plus" for n in names] + names + fast


def _symplectic_checks(cfg, eps, s, chart):
    from .refine_ham import HamNormalForm, check_equilibrium_pinned, symplectic_defect

    rng = np.random.default_rng(cfg.seed)
    box = s.domain_V
    w = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((50, s.dw))
    z = 0.3 * (2 * rng.random((50, s.dz)) - 1)
    levels = []
    for n in range(len(chart) + 1):
        nf = HamNormalForm(chart, n)
        W, Z = chart.transform(w, z, n)
        energy = float(np.abs(nf.H(w, z) - s.H(W, Z)[..., 0]).max())
        sym = symplectic_defect(chart.layers[n - 1], w, z) if n >= 1 else 0.0
        levels.append({"level": n, "symplectic_defect": sym, "energy_defect": energy})
    out = {"eps": eps, "levels": levels}
    spec = E.get_spec(cfg.system)
    we = spec.equilibrium(dict(spec.defaults, **cfg.params)) if spec.equilibrium else None
    if we is not None:
        out["pinning"] = check_equilibrium_pinned(s, chart, we).to_dict()
    return out


def _persistence(cfg, out):
    from .persistence import gap_set_scan

    rows = []
    scans = []
    a, b, n = cfg.energies
    grid = np.linspace(a, b, n)
    for eps in cfg.eps:
        fam = _build(cfg, eps)
        res = fam.monodromy_grid(grid)
        scan = gap_set_scan(fam, grid, cfg.mu, results=res)
        scans.append({"eps": eps, "mu": cfg.mu, "excluded_measure": scan.excluded_measure,
                      "excluded_intervals": scan.excluded_intervals, "degenerate": scan.degenerate})
        for E_, r, ok in zip(grid, res, scan.admissible):
            if r is None:
                rows.append([eps, E_, "", "", "nan", ok])
                continue
            for lam in r.multipliers:
                rows.append([eps, E_, float(lam.real), float(lam.imag), r.gap_margin, ok])
    write_csv(out / "multipliers.csv", ["eps", "E", "re_lambda", "im_lambda", "gap_margin", "admissible"], rows)
    write_json(out / "gap_scan.json", {"system": cfg.system, "scans": scans})
    return EXIT_OK


def run(cfg, out, threads=1):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "persistence":
        return _persistence(cfg, out)
    results = _map(lambda e: _refine_one(cfg, e), cfg.eps, threads)
    decay, manifold, checks, traces, mins, theory = [], [], [], [], [], []
    status = EXIT_OK
    for eps, (s, chart, certs, rep) in zip(cfg.eps, results):
        decay += _decay_rows(eps, certs)
        manifold += _manifold_rows(cfg, eps, s, chart)
        traces.append([(c.level, c.delta) for c in certs])
        mins.append(rep.min_delta[0])
        theory.append(rep.theory_slope)
        if any(c.status == "halt" for c in certs):
            status = EXIT_HALT
        if cfg.kind == "hamiltonian":
            checks.append(_symplectic_checks(cfg, eps, s, chart))
    write_csv(out / "decay.csv", ["eps", "n", "delta_n", "K_n", "C_Rn", "xi_n", "hypothesis_ok"], decay)
    write_csv(out / "manifold.csv", _manifold_header(cfg, results[0][0]), manifold)
    fit = {"system": cfg.system, "eps": cfg.eps, "min_delta": mins, "seed": cfg.seed, "samples": cfg.samples}
    if len(cfg.eps) >= 3 and all(m > 0 for m in mins):
        finite = [t for t in theory if math.isfinite(t)]
        rep = fit_decay(cfg.eps, min_delta=mins, theory_slope=float(np.median(finite)) if finite else math.nan,
                        prefactor_power=cfg.prefactor_power)
        fit.update(slope=rep.slope, intercept=rep.intercept, r2=rep.r2, theory_slope=rep.theory_slope,
                   degenerate=rep.degenerate, prefactor_power=cfg.prefactor_power)
    else:
        fit.update(slope=None, intercept=None, r2=None, theory_slope=None,
                   note="fit needs at least three eps values with positive delta")
    write_json(out / "fit.json", fit)
    if cfg.kind == "hamiltonian":
        write_json(out / "symplectic_checks.json", {"system": cfg.system, "runs": checks})
    return status


# ---------------------------------------------------------------------------
# verify


def _rel(got, want):
    got, want = np.asarray(got, dtype=float), np.asarray(want, dtype=float)
    scale = max(float(np.abs(want).max()), 1e-300)
    return float(np.abs(got - want).max() / scale)


def _verify_one(cfg, eps):
    name = cfg.system
    spec = E.get_spec(name)
    out = {"eps": eps}
    if name in ("counterexample", "linear_hyperbolic"):
        from .refine_general import refine
        from .sysmodel import decompose, chart_eval
        s = _build(cfg, eps)
        axes = E.default_axes(name, s, **cfg.params)
        w = np.linspace(*s.domain_V[0], 21)[:, None]
        if name == "counterexample":
            # two layers regardless of the step gates: the oracles hold at any eps
            from .refine_general import RefineSettings, _add_layer
            from .sysmodel import Chart
            chart = Chart(s, "tabulated", axes)
            st = RefineSettings(cfg.nu_floor, cfg.sigma_floor, cfg.xi0, cfg.samples, cfg.seed)
            for n, q in ((1, "rho1"), (2, "rho2")):
                _add_layer(s, chart, st)
                got = decompose(s, chart, n).rho_at(w)
                out[q] = _rel(got, E.oracle(name, q, w, eps=eps, **cfg.params))
        else:
            chart, certs, rep = refine(s, cfg.nu_floor, cfg.sigma_floor, cfg.xi0, "fixed_N", axes=axes,
                                       samples=cfg.samples, seed=cfg.seed)
            c = E.oracle(name, "manifold_slope", eps=eps, **cfg.params)
            errs = [abs(float(chart_eval(chart.truncated(k), np.array([[1.0]]))[0, 0]) - c)
                    for k in range(len(chart) + 1)]
            out["manifold_slope_errors"] = errs
            out["manifold_slope"] = errs[-1] / abs(c)
        return out
    if spec.kind == "hamiltonian":
        from .refine_ham import solve_constrained_equilibria
        s = _build(cfg, eps)
        rng = np.random.default_rng(cfg.seed)
        box = s.domain_V
        w = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((20, s.dw))
        if "zeta0" in spec.oracles:
            out["zeta0"] = _rel(solve_constrained_equilibria(s, w),
                                E.oracle(name, "zeta0", w[:, : s.d_W], eps=eps, **cfg.params))
        return out
    if spec.kind == "persistence":
        fam = _build(cfg, eps)
        a, b, n = cfg.energies
        grid = np.linspace(a, b, min(n, 20))
        errs = []
        for E_, r in zip(grid, fam.monodromy_grid(grid)):
            th = np.asarray(E.oracle(name, "rotation_angle", E_, eps=eps, **cfg.params))
            want = np.sort_complex(np.exp(1j * np.r_[th, -th]))
            errs.append(float(np.abs(np.sort_complex(r.multipliers) - want).max()))
        out["rotation_angle"] = max(errs)
        return out
    return out


def verify(cfg, out, threads=1):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    spec = E.get_spec(cfg.system)
    if not spec.oracles:
        write_json(out / "verify.json", {"system": cfg.system, "status": "no oracles", "results": []})
        return EXIT_OK
    runs = _map(lambda e: _verify_one(cfg, e), cfg.eps, threads)
    worst = {}
    for r in runs:
        for k, v in r.items():
            if k != "eps" and isinstance(v, float):
                worst[k] = max(worst.get(k, 0.0), v)
    write_json(out / "verify.json", {"system": cfg.system, "status": "ok", "max_rel_error": worst, "results": runs})
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _threads(arg):
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("MF_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("MF_THREADS must be an integer", field="MF_THREADS") from None
    return 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="slowfast", description=__doc__.splitlines()[0])
    ap.add_argument("--list-systems", action="store_true", help="print the built-in systems and exit")
    ap.add_argument("--out", help="output directory (default: [run] out, else ./results)")
    ap.add_argument("--seed", type=int, help="sampling seed, overrides the config")
    ap.add_argument("--threads", type=int, help="parallel eps values (default: MF_THREADS or 1)")
    ap.add_argument("command", nargs="?", choices=("run", "verify"))
    ap.add_argument("config", nargs="?")
    args = ap.parse_args(argv)
    if args.list_systems:
        for n in E.list_systems():
            spec = E.get_spec(n)
            print(f"{n:20s} {spec.kind:12s} {spec.description}")
        return EXIT_OK
    if not args.command or not args.config:
        ap.print_usage(sys.stderr)
        print("slowfast: error: need a command and a config file", file=sys.stderr)
        return EXIT_ERROR
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative", field="--seed")
            cfg.seed = args.seed
        out = args.out or cfg.out or "results"
        threads = _threads(args.threads)
        return (run if args.command == "run" else verify)(cfg, out, threads)
    except (SlowFastError, OSError, ValueError) as exc:
        print(f"slowfast: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
