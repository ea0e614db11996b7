"""Explicit conservative solver for d_t rho = d_u^2 Phi(rho) on the unit torus,
the weak-form residual, and comparison with simulated profiles."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .constraints import ModelSpec, compile_spec
from .errors import ConfigError
from .gradient import bernstein_eval, phi_bernstein_coefficients, phi_limit, truncated

CFL = 0.4
TABLE_POINTS = 1025


class Flux:
    """Phi on [0, 1] with its derivative bound.

    Either exact callbacks (``phi`` and ``dphi``) or a tabulated Phi with
    linear interpolation.
    """

    def __init__(self, phi: Callable, dphi_max: float, name: str = "flux", dphi: Optional[Callable] = None):
        self.phi = phi
        self.dphi = dphi
        self.dphi_max = float(dphi_max)
        self.name = name
        if not self.dphi_max > 0:
            raise ConfigError("flux must have a positive maximal slope")

    def __call__(self, rho):
        return self.phi(rho)

    @classmethod
    def polynomial(cls, power: float, name: Optional[str] = None) -> "Flux":
        """Phi(rho) = rho^p / p."""
        p = float(power)
        return cls(lambda r: np.power(r, p) / p, 1.0, name or f"rho^{p:g}/{p:g}",
                   dphi=lambda r: np.power(r, p - 1))

    @classmethod
    def linear(cls) -> "Flux":
        return cls(lambda r: np.asarray(r, dtype=float).copy(), 1.0, "rho", dphi=lambda r: np.ones_like(r))

    @classmethod
    def from_model(cls, spec: ModelSpec, L: Optional[int] = None) -> "Flux":
        """Exact Phi_L of a model (Phi' = E[c] gives the slope bound)."""
        spec_L = truncated(spec, L) if L is not None else spec
        tables = compile_spec(spec_L)
        grid = np.linspace(0, 1, 2001)
        slope = float(tables.diffusivity(grid).max())

        coeffs = phi_bernstein_coefficients(tables)

        def phi(r):
            return bernstein_eval(coeffs, r)

        return cls(phi, slope, spec_L.canonical(), dphi=tables.diffusivity)

    @classmethod
    def limit(cls, spec: ModelSpec) -> "Flux":
        """Closed-form limit flux, e.g. alpha^(n+m+1)/(n+m+1)."""
        grid = np.linspace(0, 1, 2001)
        vals = phi_limit(spec, grid)
        return cls.table(grid, vals, name=f"limit:{spec.canonical()}")

    @classmethod
    def table(cls, alpha: np.ndarray, values: np.ndarray, name: str = "table") -> "Flux":
        alpha = np.asarray(alpha, dtype=float)
        values = np.asarray(values, dtype=float)
        if alpha.shape != values.shape or alpha[0] != 0 or alpha[-1] != 1 or np.any(np.diff(alpha) <= 0):
            raise ConfigError("flux table must be increasing nodes covering [0, 1]")
        if np.any(np.diff(values) < -1e-14):
            raise ConfigError("flux table is not nondecreasing")
        slope = float((np.diff(values) / np.diff(alpha)).max())
        return cls(lambda r: np.interp(r, alpha, values), slope, name)

    def tabulate(self, points: int = TABLE_POINTS) -> "Flux":
        a = np.linspace(0, 1, points)
        return Flux.table(a, self.phi(a), name=self.name)


@dataclass
class PdeState:
    grid: np.ndarray
    time: float

    @property
    def M(self) -> int:
        return self.grid.shape[0]

    def centers(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) / self.M

    def mass(self) -> float:
        return float(self.grid.sum() / self.M)


def initial_grid(rho_ini, M: int) -> np.ndarray:
    u = (np.arange(M) + 0.5) / M
    vals = np.asarray(rho_ini(u), dtype=float) if callable(rho_ini) else np.full(M, float(rho_ini))
    if vals.shape != (M,):
        vals = np.array([float(rho_ini(x)) for x in u])
    if np.any(vals < 0) or np.any(vals > 1):
        raise ConfigError("initial profile must take values in [0, 1]")
    return vals


def stable_dt(flux: Flux, M: int, cfl: float = CFL) -> float:
    return cfl / (M * M * flux.dphi_max)


def solve(flux: Flux, rho_ini, M: int, T: float, obs_times: Optional[Sequence[float]] = None,
          dt: Optional[float] = None, cfl: float = CFL, all_steps: bool = False) -> list:
    """Forward Euler on rho_i += lam (Phi_{i+1} - 2 Phi_i + Phi_{i-1}), lam = dt M^2.

    Snapshots at ``obs_times`` (default: T only; 0 is included when asked).
    The step before an observation is shortened so it lands exactly.
    ``all_steps`` records the initial state and every intermediate step too.
    """
    if M < 3:
        raise ConfigError("need at least 3 cells")
    if T < 0:
        raise ConfigError("T must be nonnegative")
    obs = [float(T)] if obs_times is None else sorted(float(t) for t in obs_times)
    if obs and (obs[0] < 0 or obs[-1] > T + 1e-15):
        raise ConfigError("observation times must lie in [0, T]")
    dt_max = stable_dt(flux, M, cfl)
    if dt is None:
        dt = dt_max
    elif dt > stable_dt(flux, M, 0.5) * (1 + 1e-12):
        raise ConfigError(f"dt={dt} violates the stability bound {stable_dt(flux, M, 0.5)}")
    rho = initial_grid(rho_ini, M)
    t = 0.0
    out = []
    M2 = float(M * M)
    if all_steps:
        out.append(PdeState(rho.copy(), 0.0))
    for target in obs:
        while target - t > 1e-14 * max(1.0, target):
            h = min(dt, target - t)
            f = flux(rho)
            rho = rho + h * M2 * (np.roll(f, -1) - 2 * f + np.roll(f, 1))
            t += h
            if all_steps and target - t > 1e-14 * max(1.0, target):
                out.append(PdeState(rho.copy(), t))
        t = target
        if not (all_steps and out[-1].time == target):
            out.append(PdeState(rho.copy(), target))
    return out


def solve_steps(flux: Flux, rho_ini, M: int, steps: int, dt: Optional[float] = None) -> PdeState:
    """Fixed number of steps (used for conservation checks)."""
    dt = stable_dt(flux, M) if dt is None else dt
    rho = initial_grid(rho_ini, M)
    lam = dt * M * M
    for _ in range(int(steps)):
        f = flux(rho)
        rho = rho + lam * (np.roll(f, -1) - 2 * f + np.roll(f, 1))
    return PdeState(rho, steps * dt)


@dataclass
class TestFunction:
    """Space-time test function with the derivatives the weak form needs."""

    g: Callable
    g_t: Callable
    g_uu: Callable
    name: str = "G"

    __test__ = False  # not a pytest class

    @classmethod
    def fourier(cls, mode: int, kind: str = "cos", decay: float = 0.0) -> "TestFunction":
        """exp(-decay t) cos/sin(2 pi mode u)."""
        w = 2 * math.pi * mode
        trig = np.cos if kind == "cos" else np.sin
        return cls(
            lambda u, t: math.exp(-decay * t) * trig(w * u),
            lambda u, t: -decay * math.exp(-decay * t) * trig(w * u),
            lambda u, t: -w * w * math.exp(-decay * t) * trig(w * u),
            f"{kind}{mode}",
        )

    @classmethod
    def constant(cls, value: float = 1.0) -> "TestFunction":
        return cls(lambda u, t: np.full_like(u, value), lambda u, t: np.zeros_like(u),
                   lambda u, t: np.zeros_like(u), f"const{value:g}")


def weak_residual(snapshots: Sequence[PdeState], rho_ini, G: TestFunction, flux: Flux) -> float:
    """<rho_t, G_t> - <rho_ini, G_0> - int_0^t (<rho_s, d_s G_s> + <Phi(rho_s), d_u^2 G_s>) ds.

    Space: midpoint rule on cell centers.  Time: trapezoid over the snapshot
    times, which must start at 0.
    """
    if len(snapshots) < 2 or snapshots[0].time != 0.0:
        raise ConfigError("need snapshots starting at t = 0")
    M = snapshots[0].M
    u = snapshots[0].centers()
    rho0 = initial_grid(rho_ini, M)
    times = np.array([s.time for s in snapshots])
    integrand = np.array([
        np.mean(s.grid * G.g_t(u, s.time) + flux(s.grid) * G.g_uu(u, s.time)) for s in snapshots
    ])
    integral = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(times)))
    last = snapshots[-1]
    return float(np.mean(last.grid * G.g(u, last.time)) - np.mean(rho0 * G.g(u, 0.0)) - integral)


# ---------------------------------------------------------------------------
# Comparison with simulation


def periodic_resample(grid: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Linear interpolation of cell-center values at arbitrary points on the torus."""
    M = grid.shape[0]
    centers = (np.arange(M) + 0.5) / M
    xp = np.concatenate([[centers[-1] - 1.0], centers, [centers[0] + 1.0]])
    fp = np.concatenate([[grid[-1]], grid, [grid[0]]])
    return np.interp(np.mod(points, 1.0), xp, fp)


def pde_box_averages(state: PdeState, N: int, box_size: int) -> np.ndarray:
    """PDE solution sampled at the sites x/N and averaged over simulation boxes."""
    if N % box_size:
        raise ConfigError("box size must divide N")
    site_vals = periodic_resample(state.grid, np.arange(N) / N)
    return site_vals.reshape(-1, box_size).mean(axis=1)


def battery() -> list:
    """Fixed test functions for pairing distances: constant and modes 1..3."""
    fs = [("const", lambda u: np.ones_like(u))]
    for k in (1, 2, 3):
        fs.append((f"cos{k}", lambda u, k=k: np.cos(2 * np.pi * k * u)))
        fs.append((f"sin{k}", lambda u, k=k: np.sin(2 * np.pi * k * u)))
    return fs


@dataclass
class CompareReport:
    times: list
    l1: list
    pairing: list  # one dict per time

    def records(self) -> list:
        return [{"check": "compare", "t": t, "l1": d, **{f"pair_{k}": v for k, v in p.items()}}
                for t, d, p in zip(self.times, self.l1, self.pairing)]


def compare_profiles(times: Sequence[float], empirical: np.ndarray, N: int, box_size: int,
                     snapshots: Sequence[PdeState]) -> CompareReport:
    """L1 distance and pairing distances between box densities and PDE states."""
    snap_times = [s.time for s in snapshots]
    if len(snap_times) != len(times) or any(abs(a - b) > 1e-12 for a, b in zip(times, snap_times)):
        raise ConfigError("observation times of simulation and PDE differ")
    empirical = np.atleast_2d(np.asarray(empirical, dtype=float))
    nbox = N // box_size
    centers = (np.arange(nbox) * box_size + (box_size - 1) / 2) / N
    l1, pairs = [], []
    for row, state in zip(empirical, snapshots):
        pde = pde_box_averages(state, N, box_size)
        l1.append(float(np.mean(np.abs(row - pde))))
        u = state.centers()
        pairs.append({name: abs(float(np.mean(G(centers) * row)) - float(np.mean(G(u) * state.grid)))
                      for name, G in battery()})
    return CompareReport(list(times), l1, pairs)


def compare(traj, snapshots: Sequence[PdeState]) -> CompareReport:
    """Compare a trajectory (or anything with times, N, box_size and matrix())."""
    return compare_profiles(traj.times, traj.matrix(), traj.N, traj.box_size, snapshots)


# ---------------------------------------------------------------------------
# CSV output


def write_snapshots(snapshots: Sequence[PdeState], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u", "rho"])
        for s in snapshots:
            for u, r in zip(s.centers(), s.grid):
                w.writerow([format(s.time, ".17g"), format(u, ".17g"), format(r, ".17g")])


def read_snapshots(path) -> list:
    rows: dict = {}
    with open(path) as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if head != ["t", "u", "rho"]:
            raise ConfigError("missing t,u,rho header")
        for t, u, r in reader:
            rows.setdefault(float(t), []).append(float(r))
    return [PdeState(np.array(v), t) for t, v in sorted(rows.items())]


def write_flux_table(flux: Flux, path, points: int = TABLE_POINTS):
    a = np.linspace(0, 1, points)
    vals = flux(a)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "phi"])
        for x, v in zip(a, vals):
            w.writerow([format(x, ".17g"), format(v, ".17g")])
