"""Continuous-time simulation of the perturbed constrained exclusion process.

Each discordant bond {x, x+1} rings at rate ``N^2 (c(tau_x eta) + p_N)``.  Time is
macroscopic, so observation times are hydrodynamic times.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels as K
from .constraints import ModelSpec, compile_spec, parse_spec
from .errors import ConfigError, SizeError
from .lattice import Configuration

UNIFORM_BATCH = 1 << 17


def make_rng(seed: int, realization: int = 0) -> np.random.Generator:
    """Independent Philox stream for (master seed, realization)."""
    if seed < 0 or realization < 0:
        raise ConfigError("seed and realization must be nonnegative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(realization,))))


@dataclass(frozen=True)
class ConstantProfile:
    value: float

    def __call__(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.value)


@dataclass(frozen=True)
class SineProfile:
    """mean + amp sin(2 pi mode u)."""

    mean: float
    amp: float
    mode: float = 1.0

    def __call__(self, u):
        return self.mean + self.amp * np.sin(2 * np.pi * self.mode * np.asarray(u, dtype=float))


def _profile_values(profile, N: int) -> np.ndarray:
    u = np.arange(N) / N
    if callable(profile):
        vals = np.asarray(profile(u), dtype=float)
        if vals.shape != (N,):
            vals = np.array([float(profile(x)) for x in u])
    else:
        vals = np.full(N, float(profile))
    if np.any(vals < 0) or np.any(vals > 1) or np.any(~np.isfinite(vals)):
        raise ConfigError("profile values must lie in [0, 1]")
    return vals


def sample_initial(profile, N: int, seed: int = 0, rng: Optional[np.random.Generator] = None) -> Configuration:
    """Product Bernoulli(profile(x/N)) configuration."""
    if N < 1:
        raise ConfigError("N must be positive")
    rng = make_rng(seed) if rng is None else rng
    occ = (rng.random(N) < _profile_values(profile, N)).astype(np.uint8)
    return Configuration.from_array(occ)


def default_perturbation(spec: ModelSpec, N: int) -> float:
    """1/N when blocked configurations exist, 0 for a positive constraint."""
    inf, _ = compile_spec(spec).bounds()
    return 0.0 if inf > 0 else 1.0 / N


def resolve_perturbation(spec: ModelSpec, N: int) -> float:
    if spec.perturbation is None:
        return default_perturbation(spec, N)
    p = float(spec.perturbation)
    if p < 0:
        raise ConfigError("perturbation must be nonnegative")
    return p


class RateIndex:
    """Live configuration plus the sum tree of bond rates."""

    def __init__(self, spec: ModelSpec, cfg: Configuration, perturbation: Optional[float] = None):
        tables = compile_spec(spec)
        N = cfg.n_sites
        tables.check_lattice(N)
        try:
            inf = tables.bounds()[0]
        except SizeError:
            inf = 0.0
        if inf < 0:
            raise ConfigError("constraint takes negative values; not a rate")
        self.spec = spec
        self.N = N
        self.perturbation = resolve_perturbation(spec, N) if perturbation is None else float(perturbation)
        self.scale = float(N) ** 2
        self.Ls, self.F = tables.kernel_arrays()
        self.lmax = tables.max_len
        self.size = 1 << max(1, (N - 1).bit_length())
        self.eta = cfg.to_array().astype(np.int64)
        self.tree = np.zeros(2 * self.size)
        self.rebuild()

    def rebuild(self):
        K.rebuild(self.eta, self.tree, self.size, self.Ls, self.F, self.lmax,
                  self.perturbation, self.scale)

    @property
    def bond_rates(self) -> np.ndarray:
        return self.tree[self.size:self.size + self.N].copy()

    @property
    def total_rate(self) -> float:
        return float(self.tree[1])

    def fresh_rates(self) -> np.ndarray:
        """Bond rates recomputed from scratch (for consistency checks)."""
        return np.array([K.bond_rate_at(self.eta, x, self.Ls, self.F, self.lmax,
                                        self.perturbation, self.scale) for x in range(self.N)])

    def configuration(self) -> Configuration:
        return Configuration.from_array(self.eta)

    def advance(self, t: float, t_target: float, uniforms: np.ndarray, pos: int,
                max_events: int = 1 << 62):
        return K.advance(self.eta, self.tree, self.size, self.Ls, self.F, self.lmax,
                         self.perturbation, self.scale, t, t_target, uniforms, pos, max_events)

    def step(self, rng: np.random.Generator):
        """One event.  Returns (waiting time, bond), or None when blocked."""
        if self.total_rate <= 0:
            return None
        before = self.eta.copy()
        while True:
            u = rng.random(8)
            t, pos, status, events = self.advance(0.0, math.inf, u, 0, 1)
            if status == K.BLOCKED:
                return None
            if events == 1:
                break
        moved = np.flatnonzero(before != self.eta)
        x = int(moved[0])
        if len(moved) == 2 and moved[0] == 0 and moved[1] == self.N - 1:
            x = self.N - 1
        return float(t), x


@dataclass
class DensityProfile:
    """Box averages of one configuration; ``fine`` keeps the occupations."""

    values: np.ndarray
    box_size: int
    fine: Optional[np.ndarray] = None

    @classmethod
    def from_occupations(cls, occ: np.ndarray, box_size: int, keep_fine: bool = True):
        occ = np.asarray(occ)
        N = occ.shape[0]
        if box_size < 1 or N % box_size:
            raise ConfigError(f"box size {box_size} must divide N={N}")
        vals = occ.reshape(-1, box_size).mean(axis=1)
        return cls(vals, box_size, occ.astype(np.uint8).copy() if keep_fine else None)

    @property
    def n_sites(self) -> int:
        return len(self.values) * self.box_size

    def density(self) -> float:
        return float(self.values.mean())

    def centers(self) -> np.ndarray:
        """Macroscopic positions of the box midpoints, sites x at u = x/N."""
        s = self.box_size
        return (np.arange(len(self.values)) * s + (s - 1) / 2) / self.n_sites


def pair_with_test_function(profile: DensityProfile, G: Callable) -> float:
    """pi^N(G) = (1/N) sum_x G(x/N) eta(x); midpoint rule on boxes when the
    occupations were not kept."""
    if profile.fine is not None:
        N = profile.fine.shape[0]
        u = np.arange(N) / N
        return float(np.mean(np.asarray(G(u), dtype=float) * profile.fine))
    return float(np.mean(np.asarray(G(profile.centers()), dtype=float) * profile.values))


@dataclass
class Trajectory:
    times: list
    profiles: list
    seed: int
    model: ModelSpec
    N: int
    realization: int = 0
    perturbation: float = 0.0
    eps: float = 0.0
    events: int = 0
    blocked_at: Optional[float] = None
    particles: int = 0

    @property
    def box_size(self) -> int:
        return self.profiles[0].box_size

    def densities(self) -> np.ndarray:
        return np.array([p.density() for p in self.profiles])

    def matrix(self) -> np.ndarray:
        return np.array([p.values for p in self.profiles])

    def header(self) -> dict:
        return {
            "model": self.model.with_perturbation(self.perturbation).canonical(),
            "N": self.N,
            "seed": self.seed,
            "realization": self.realization,
            "eps": repr(float(self.eps)),
            "box_size": self.box_size,
            "events": self.events,
            "blocked_at": "" if self.blocked_at is None else repr(self.blocked_at),
        }


def box_size_for(N: int, eps: float) -> int:
    if not 0 < eps <= 1:
        raise ConfigError("eps must lie in (0, 1]")
    s = math.ceil(eps * N - 1e-9)
    if N % s:
        raise ConfigError(f"box size ceil(eps N) = {s} does not divide N = {N}")
    return s


def run(spec: ModelSpec, N: int, profile, T: float, obs_times: Sequence[float],
        eps: float, seed: int, realization: int = 0, keep_fine: bool = True,
        initial: Optional[Configuration] = None) -> Trajectory:
    """Simulate one realization and record box-averaged profiles at ``obs_times``."""
    obs = [float(t) for t in obs_times]
    if not obs or any(b <= a for a, b in zip(obs, obs[1:])):
        raise ConfigError("observation times must be nonempty and strictly increasing")
    if obs[0] < 0 or obs[-1] > T:
        raise ConfigError("observation times must lie in [0, T]")
    box = box_size_for(N, eps)
    rng = make_rng(seed, realization)
    cfg = sample_initial(profile, N, rng=rng) if initial is None else initial
    if cfg.n_sites != N:
        raise ConfigError("initial configuration has the wrong size")
    index = RateIndex(spec, cfg)
    particles = int(index.eta.sum())
    t, pos, events = 0.0, 0, 0
    uniforms = rng.random(UNIFORM_BATCH)
    blocked_at = None
    profiles = []
    for target in obs:
        while t < target:
            t, pos, status, k = index.advance(t, target, uniforms, pos)
            events += k
            if status == K.NEED_UNIFORMS:
                uniforms = rng.random(UNIFORM_BATCH)
                pos = 0
            elif status == K.BLOCKED:
                # absorbing: nothing moves again
                if blocked_at is None:
                    blocked_at = t
                t = target
        profiles.append(DensityProfile.from_occupations(index.eta, box, keep_fine))
        if int(index.eta.sum()) != particles:
            raise RuntimeError("particle number not conserved")
    return Trajectory(obs, profiles, seed, spec, N, realization, index.perturbation,
                      eps, events, blocked_at, particles)


def realization_seeds(master_seed: int, R: int):
    """(seed, realization) pairs; each pair maps to its own Philox stream."""
    return [(int(master_seed), r) for r in range(R)]


def run_many(spec: ModelSpec, N: int, profile, T: float, obs_times, eps: float,
             master_seed: int, R: int, workers: int = 1, keep_fine: bool = False) -> list:
    """Run ``R`` realizations, serially or on a process pool."""
    jobs = [(spec, N, profile, T, list(obs_times), eps, s, r, keep_fine)
            for s, r in realization_seeds(master_seed, R)]
    if workers <= 1 or R <= 1:
        return [run(*job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _run_job(job):
    return run(*job)


def average_profiles(trajs: Sequence[Trajectory]):
    """(mean, stderr) arrays of shape (times, boxes) over realizations."""
    if not trajs:
        raise ConfigError("no trajectories")
    shape = trajs[0].matrix().shape
    if any(tr.matrix().shape != shape or tr.times != trajs[0].times for tr in trajs):
        raise ConfigError("trajectories have different grids")
    stack = np.stack([tr.matrix() for tr in trajs])
    mean = stack.mean(axis=0)
    if len(trajs) > 1:
        err = stack.std(axis=0, ddof=1) / math.sqrt(len(trajs))
    else:
        err = np.zeros_like(mean)
    return mean, err


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_trajectory(traj: Trajectory, path_or_file):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        for k, v in traj.header().items():
            fh.write(f"# {k} = {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "box", "density"])
        for t, prof in zip(traj.times, traj.profiles):
            for b, v in enumerate(prof.values):
                w.writerow([_fmt(t), b, _fmt(v)])
    finally:
        if own:
            fh.close()


def read_trajectory_csv(path_or_text):
    """Return (header dict, times, matrix[time, box])."""
    if isinstance(path_or_text, str) and "\n" in path_or_text:
        text = path_or_text
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    header = {}
    body = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            key, _, val = line[1:].partition("=")
            header[key.strip()] = val.strip()
        elif line.strip():
            body.append((lineno, line))
    if not body or body[0][1].strip() != "t,box,density":
        raise ConfigError("missing t,box,density column header")
    rows = {}
    for lineno, line in body[1:]:
        parts = line.split(",")
        if len(parts) != 3:
            raise ConfigError(f"line {lineno}: expected 3 columns")
        try:
            t, b, v = float(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
        rows.setdefault(t, {})[b] = v
    times = sorted(rows)
    nbox = len(rows[times[0]])
    mat = np.zeros((len(times), nbox))
    for i, t in enumerate(times):
        if sorted(rows[t]) != list(range(nbox)):
            raise ConfigError(f"time {t}: inconsistent box indices")
        mat[i] = [rows[t][b] for b in range(nbox)]
    return header, times, mat


def trajectory_from_csv(path) -> Trajectory:
    header, times, mat = read_trajectory_csv(path)
    spec = parse_spec(header["model"])
    box = int(header["box_size"])
    profiles = [DensityProfile(row.copy(), box) for row in mat]
    blocked = header.get("blocked_at", "")
    return Trajectory(times, profiles, int(header["seed"]), spec.with_perturbation(None), int(header["N"]),
                      int(header.get("realization", 0)), float(spec.perturbation or 0.0),
                      float(header.get("eps", 0.0)), int(header.get("events", 0)),
                      float(blocked) if blocked else None)
