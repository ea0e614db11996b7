"""Command line front end: ``kcx <command> <config.ini> [--seed S]``.

Configs are flat ``key = value`` files with one ``[model]`` block::

    N = 12
    tol = 1e-10

    [model]
    family = interpolating
    n = 1
    m = 0.5
    ell = 4

Exit codes: 0 success, 1 failed check (witness printed), 2 config error.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import json
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import gradient as gr
from . import pde
from . import simulator as sim
from .constraints import ModelSpec, closed_form_diffusivity, exact_expectation, parse_spec
from .errors import ConfigError, SizeError

COMMANDS = (
    "verify-gradient", "solve-gradient", "check-assumptions", "classify-regime",
    "mobile-cluster", "diffusivity", "phi-table", "simulate", "pde", "compare", "aggregate",
)
WORKERS_ENV = "KCX_WORKERS"

# keys accepted in the top-level block, per command
COMMON = {"output", "master_seed"}
KEYS = {
    "verify-gradient": {"N", "tol", "variant"},
    "solve-gradient": {"N", "tol"},
    "check-assumptions": {"N_list", "ell_rule"},
    "classify-regime": {"max_cluster"},
    "mobile-cluster": {"cluster"},
    "diffusivity": {"alpha_points", "tol"},
    "phi-table": {"L", "alpha_points"},
    "simulate": {"N", "T", "obs_times", "eps", "realizations", "profile"},
    "pde": {"M", "T", "obs_times", "profile", "flux", "dt", "cfl"},
    "compare": {"N", "T", "obs_times", "eps", "realizations", "profile", "M", "flux", "inputs", "max_l1"},
    "aggregate": {"inputs"},
}
MODEL_KEYS = {"family", "n", "L", "m", "ell", "weights", "components", "perturbation", "spec"}


class Config:
    def __init__(self, values: dict, model: dict | None, source: str):
        self.values = values
        self.model_block = model
        self.source = source

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, key):
        if key not in self.values:
            raise ConfigError(f"{self.source}: missing key {key!r}")
        return self.values[key]

    def int(self, key, default=None):
        v = self.values.get(key)
        if v is None:
            if default is None:
                raise ConfigError(f"{self.source}: missing key {key!r}")
            return default
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be an integer, got {v!r}") from None

    def float(self, key, default=None):
        v = self.values.get(key)
        if v is None:
            if default is None:
                raise ConfigError(f"{self.source}: missing key {key!r}")
            return default
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be a number, got {v!r}") from None

    def floats(self, key, default=None):
        v = self.values.get(key)
        if v is None:
            if default is None:
                raise ConfigError(f"{self.source}: missing key {key!r}")
            return list(default)
        try:
            return [float(x) for x in v.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{self.source}: {key} must be a list of numbers") from None

    def ints(self, key):
        return [int(x) for x in self.floats(key)]

    def model(self) -> ModelSpec:
        if self.model_block is None:
            raise ConfigError(f"{self.source}: missing [model] section")
        return model_from_block(self.model_block, self.source)


def _num(text, key, source):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{source}: model key {key} must be a number, got {text!r}") from None


def model_from_block(block: dict, source: str = "config") -> ModelSpec:
    unknown = set(block) - MODEL_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown model keys {sorted(unknown)}")
    if "spec" in block:
        spec = parse_spec(block["spec"])
    else:
        fam = block.get("family")
        if fam is None:
            raise ConfigError(f"{source}: model needs 'family' or 'spec'")
        if fam == "superposition":
            spec = parse_spec(f"superposition({block.get('components', '')})")
        else:
            args = []
            for key in ("n", "L", "m", "ell", "weights"):
                if key in block:
                    args.append(f"{key}={block[key]}")
            spec = parse_spec(f"{fam}({','.join(args)})")
    if "perturbation" in block:
        spec = spec.with_perturbation(_num(block["perturbation"], "perturbation", source))
    return spec


def load_config(path: str, command: str) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, command, source=path)


def parse_config(text: str, command: str, source: str = "config") -> Config:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str  # keys are case sensitive (N vs n)
    try:
        parser.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(_shift_lines(str(exc))) from None
    extra = set(parser.sections()) - {"run", "model"}
    if extra:
        raise ConfigError(f"{source}: unknown sections {sorted(extra)}")
    values = dict(parser["run"])
    allowed = KEYS[command] | COMMON
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"{source}: unknown keys for {command}: {sorted(unknown)}")
    model = dict(parser["model"]) if parser.has_section("model") else None
    return Config(values, model, source)


def _shift_lines(msg: str) -> str:
    # the implicit [run] header adds one line
    return re.sub(r"line\s+(\d+)", lambda m: f"line {int(m.group(1)) - 1}", msg)


# ---------------------------------------------------------------------------
# profiles and fluxes without eval


def parse_profile(text: str):
    """``constant:a`` or ``sine:mean,amp,mode``."""
    kind, _, args = text.partition(":")
    try:
        vals = [float(x) for x in args.split(",")] if args else []
    except ValueError:
        raise ConfigError(f"bad profile arguments {args!r}") from None
    if kind == "constant" and len(vals) == 1:
        a = vals[0]
        if not 0 <= a <= 1:
            raise ConfigError("constant profile must lie in [0, 1]")
        return sim.ConstantProfile(a)
    if kind == "sine" and len(vals) == 3:
        mean, amp, mode = vals
        if abs(amp) > min(mean, 1 - mean):
            raise ConfigError("sine profile leaves [0, 1]")
        return sim.SineProfile(mean, amp, mode)
    raise ConfigError(f"unknown profile {text!r}; use constant:a or sine:mean,amp,mode")


def parse_flux(text: str, spec: ModelSpec | None) -> pde.Flux:
    """``phi_L:12``, ``phi``, ``limit``, ``linear`` or ``power:p``."""
    kind, _, arg = text.partition(":")
    if kind == "linear":
        return pde.Flux.linear()
    if kind == "power":
        return pde.Flux.polynomial(float(arg))
    if spec is None:
        raise ConfigError(f"flux {text!r} needs a [model] section")
    if kind == "phi_L":
        return pde.Flux.from_model(spec, int(arg))
    if kind == "phi":
        return pde.Flux.from_model(spec)
    if kind == "limit":
        return pde.Flux.limit(spec)
    raise ConfigError(f"unknown flux {text!r}")


# ---------------------------------------------------------------------------
# commands; each returns (records, ok)


def _witness_line(rec):
    if "witness" in rec:
        return f"witness: {rec['witness']}"
    return None


def cmd_verify_gradient(cfg: Config):
    spec = cfg.model()
    rep = gr.verify_gradient(spec, cfg.int("N"), cfg.float("tol", gr.GRADIENT_TOL),
                             cfg.get("variant", "forward"))
    return [rep.record()], rep.passed


def cmd_solve_gradient(cfg: Config):
    spec = cfg.model()
    rep = gr.solve_gradient(spec, cfg.int("N"), cfg.float("tol", gr.GRADIENT_TOL))
    return [rep.record()], rep.passed


def cmd_check_assumptions(cfg: Config):
    spec = cfg.model()
    rule = cfg.get("ell_rule", "default")
    if rule == "sqrt":
        ell_rule = lambda N: max(2, math.isqrt(N))
    elif rule == "default":
        ell_rule = None
    else:
        try:
            ell_rule = int(rule)
        except ValueError:
            raise ConfigError(f"ell_rule must be sqrt, default or an integer, got {rule!r}") from None
    rep = gr.check_assumptions(spec, cfg.ints("N_list"), ell_rule)
    recs = rep.records()
    ok = bool(np.all(np.diff(rep.sup_rate_over_N) <= 0))
    return recs, ok


def cmd_classify_regime(cfg: Config):
    spec = cfg.model()
    mc = cfg.get("max_cluster")
    rep = gr.classify_regime(spec, int(mc) if mc else None)
    return [rep.record()], rep.regime != "neither"


def cmd_mobile_cluster(cfg: Config):
    spec = cfg.model()
    rep = gr.mobile_cluster_check(spec, cfg.require("cluster").strip())
    rec = {"check": "mobile_cluster", "model": spec.canonical(), "cluster": rep.cluster,
           "certified": rep.certified, "r_star": rep.r_star, "max_path": rep.max_path}
    if rep.stuck:
        rec["witness"] = json.dumps(rep.stuck)
    return [rec], rep.certified


def _alpha_grid(cfg: Config):
    k = cfg.int("alpha_points", 11)
    if k < 2:
        raise ConfigError("alpha_points must be at least 2")
    return np.linspace(0, 1, k)


def cmd_diffusivity(cfg: Config):
    spec = cfg.model()
    tol = cfg.float("tol", 1e-12)
    recs, worst = [], 0.0
    for a in _alpha_grid(cfg):
        ex = exact_expectation(spec, float(a))
        cf = float(closed_form_diffusivity(spec, float(a)))
        worst = max(worst, abs(ex - cf))
        recs.append({"alpha": float(a), "exact": ex, "closed_form": cf})
    recs.append({"check": "diffusivity", "model": spec.canonical(), "max_abs_diff": worst,
                 "tolerance": tol, "passed": worst <= tol})
    return recs, worst <= tol


def cmd_phi_table(cfg: Config):
    spec = cfg.model()
    L = cfg.int("L", 12)
    a = _alpha_grid(cfg)
    vals = np.atleast_1d(gr.phi_L(spec, L, a))
    lim = np.atleast_1d(gr.phi_limit(spec, a))
    return [{"alpha": float(x), "phi_L": float(v), "phi_limit": float(w)} for x, v, w in zip(a, vals, lim)], True


def _workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def _sim_setup(cfg: Config):
    spec = cfg.model()
    N = cfg.int("N")
    T = cfg.float("T")
    obs = cfg.floats("obs_times", [T])
    eps = cfg.float("eps", 1.0 / 32)
    R = cfg.int("realizations", 1)
    prof = parse_profile(cfg.get("profile", "constant:0.5"))
    seed = cfg.int("master_seed", 0)
    return spec, N, T, obs, eps, R, prof, seed


def cmd_simulate(cfg: Config):
    spec, N, T, obs, eps, R, prof, seed = _sim_setup(cfg)
    trajs = sim.run_many(spec, N, prof, T, obs, eps, seed, R, workers=_workers())
    out = cfg.get("output")
    recs = []
    for tr in trajs:
        path = None
        if out:
            path = f"{out}.r{tr.realization:03d}.csv"
            sim.write_trajectory(tr, path)
        recs.append({"check": "simulate", "model": tr.header()["model"], "N": N, "seed": tr.seed,
                     "realization": tr.realization, "events": tr.events, "particles": tr.particles,
                     "blocked_at": tr.blocked_at, "density": tr.densities().tolist(), "file": path})
    return recs, True


def cmd_pde(cfg: Config):
    spec = cfg.model() if cfg.model_block is not None else None
    flux = parse_flux(cfg.get("flux", "phi_L:12"), spec)
    T = cfg.float("T")
    obs = cfg.floats("obs_times", [T])
    M = cfg.int("M", 256)
    dt = cfg.get("dt")
    snaps = pde.solve(flux, parse_profile(cfg.get("profile", "constant:0.5")), M, T, obs,
                      dt=float(dt) if dt else None, cfl=cfg.float("cfl", pde.CFL))
    out = cfg.get("output")
    if out:
        pde.write_snapshots(snaps, out)
    return [{"check": "pde", "flux": flux.name, "M": M, "t": s.time, "mass": s.mass(),
             "min": float(s.grid.min()), "max": float(s.grid.max())} for s in snaps], True


def _expand_inputs(text: str):
    paths = []
    for tok in text.split():
        hits = sorted(glob.glob(tok))
        paths.extend(hits if hits else [tok])
    return paths


def _read_many(paths):
    data = [sim.read_trajectory_csv(p) for p in paths]
    h0, t0, m0 = data[0]
    for (h, t, m), p in zip(data[1:], paths[1:]):
        if t != t0 or m.shape != m0.shape or h.get("N") != h0.get("N") or h.get("box_size") != h0.get("box_size"):
            raise ConfigError(f"{p}: time/box grid differs from {paths[0]}")
    return h0, t0, np.stack([m for _, _, m in data])


def aggregate(paths, output=None):
    """Per (t, box) mean and standard error over realization CSVs."""
    if len(paths) < 2:
        raise ConfigError("aggregate needs at least two realization files")
    header, times, stack = _read_many(paths)
    mean = stack.mean(axis=0)
    err = stack.std(axis=0, ddof=1) / math.sqrt(stack.shape[0])
    if output:
        with open(output, "w") as fh:
            for k in ("model", "N", "eps", "box_size"):
                if k in header:
                    fh.write(f"# {k} = {header[k]}\n")
            fh.write(f"# realizations = {stack.shape[0]}\n")
            fh.write("t,box,mean,stderr\n")
            for i, t in enumerate(times):
                for b in range(mean.shape[1]):
                    fh.write(f"{t:.17g},{b},{mean[i, b]:.17g},{err[i, b]:.17g}\n")
    return header, times, mean, err


def read_aggregate(path):
    header, rows = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].partition("=")
                header[k.strip()] = v.strip()
            elif line.startswith("t,"):
                continue
            elif line.strip():
                t, b, m, e = line.split(",")
                rows.append((float(t), int(b), float(m), float(e)))
    times = sorted({r[0] for r in rows})
    nbox = max(r[1] for r in rows) + 1
    mean = np.zeros((len(times), nbox))
    err = np.zeros_like(mean)
    for t, b, m, e in rows:
        mean[times.index(t), b] = m
        err[times.index(t), b] = e
    return header, times, mean, err


def cmd_aggregate(cfg: Config, extra=()):
    paths = list(extra) + (_expand_inputs(cfg.get("inputs", "")) if cfg.get("inputs") else [])
    header, times, mean, err = aggregate(paths, cfg.get("output"))
    return [{"check": "aggregate", "files": len(paths), "times": times,
             "max_stderr": float(err.max())}], True


def cmd_compare(cfg: Config):
    spec = cfg.model()
    flux = parse_flux(cfg.get("flux", "phi_L:12"), spec)
    prof = parse_profile(cfg.get("profile", "sine:0.5,0.25,1"))
    M = cfg.int("M", 512)
    if cfg.get("inputs"):
        header, times, stack = _read_many(_expand_inputs(cfg.get("inputs")))
        N, box = int(header["N"]), int(header["box_size"])
        emp = stack.mean(axis=0)
    else:
        spec, N, T, times, eps, R, prof_sim, seed = _sim_setup(cfg)
        trajs = sim.run_many(spec, N, prof, T, times, eps, seed, R, workers=_workers())
        emp, _ = sim.average_profiles(trajs)
        box = trajs[0].box_size
    T = max(times)
    snaps = pde.solve(flux, prof, M, T, times)
    rep = pde.compare_profiles(times, emp, N, box, snaps)
    recs = rep.records()
    ok = True
    if cfg.get("max_l1"):
        ok = max(rep.l1) <= cfg.float("max_l1")
    for r in recs:
        r.update({"model": spec.canonical(), "N": N, "flux": flux.name})
    return recs, ok


HANDLERS = {
    "verify-gradient": cmd_verify_gradient,
    "solve-gradient": cmd_solve_gradient,
    "check-assumptions": cmd_check_assumptions,
    "classify-regime": cmd_classify_regime,
    "mobile-cluster": cmd_mobile_cluster,
    "diffusivity": cmd_diffusivity,
    "phi-table": cmd_phi_table,
    "simulate": cmd_simulate,
    "pde": cmd_pde,
    "compare": cmd_compare,
}


def _emit(records, output, command, stream):
    lines = [json.dumps(r, default=_json_default) for r in records]
    for line in lines:
        print(line, file=stream)
    if output and command not in ("simulate", "pde", "aggregate"):
        with open(output, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="kcx", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="experiment config file")
    ap.add_argument("inputs", nargs="*", help="realization CSVs (aggregate only)")
    ap.add_argument("--seed", type=int, default=None, help="override master_seed")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg.values["master_seed"] = str(args.seed)
        if args.inputs and args.command != "aggregate":
            raise ConfigError("extra positional inputs are only accepted by aggregate")
        if args.command == "aggregate":
            records, ok = cmd_aggregate(cfg, args.inputs)
        else:
            records, ok = HANDLERS[args.command](cfg)
    except (ConfigError, SizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _emit(records, cfg.get("output"), args.command, sys.stdout)
    if not ok:
        for r in records:
            w = _witness_line(r)
            if w:
                print(w, file=sys.stderr)
        print(f"{args.command}: check failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
