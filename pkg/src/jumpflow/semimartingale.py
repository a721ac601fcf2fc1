"""Cadlag driving paths: jump-diffusion sampling and path algebra.

A path is stored as a continuous piecewise-linear part sampled on a grid plus
a finite ledger of jumps whose times are themselves grid points.  All solvers
downstream consume this representation, so the conventions here (left limits,
realized quadratic variation, jump atoms) are the single source of truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


def _substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, purpose, channel...).

    Each purpose/channel pair owns its own SeedSequence spawn key, so adding
    channels or drawing more jumps never perturbs the draws of an existing
    channel.
    """
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class JumpLaw:
    """Distribution of a single jump's m-vector size.

    kind is one of "constant", "uniform" (box), "gaussian" (independent
    per-channel normal).  Use the classmethod constructors.
    """

    kind: str
    value: np.ndarray | None = None
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @classmethod
    def constant(cls, value):
        return cls(kind="constant", value=np.atleast_1d(np.asarray(value, dtype=float)))

    @classmethod
    def uniform(cls, low, high):
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if low.shape != high.shape or np.any(high < low):
            raise ValueError("uniform jump law needs low <= high of equal shape")
        return cls(kind="uniform", low=low, high=high)

    @classmethod
    def gaussian(cls, mean, std):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.atleast_1d(np.asarray(std, dtype=float))
        if mean.shape != std.shape or np.any(std < 0):
            raise ValueError("gaussian jump law needs std >= 0 of mean's shape")
        return cls(kind="gaussian", mean=mean, std=std)

    @property
    def dimension(self) -> int:
        for arr in (self.value, self.low, self.mean):
            if arr is not None:
                return arr.shape[0]
        raise ValueError("jump law has no parameters")

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        m = self.dimension
        if self.kind == "constant":
            return np.tile(self.value, (count, 1))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=(count, m))
        if self.kind == "gaussian":
            return self.mean + self.std * rng.standard_normal((count, m))
        raise ValueError("unknown jump law kind %r" % self.kind)


@dataclass(frozen=True)
class PathParams:
    """Sampling parameters for a jump-diffusion driver.

    Z_t = drift*t + brownian_scale*B_t + sum of jumps up to t, with a
    Poisson(jump_intensity * horizon) number of jumps placed uniformly on
    (0, horizon].  ``seed`` feeds the documented substream scheme.
    """

    horizon: float
    step: float
    brownian_scale: tuple | float = 1.0
    drift: tuple | float = 0.0
    jump_intensity: float = 0.0
    jump_law: JumpLaw | None = None
    seed: int = 0
    dimension: int = 1

    def __post_init__(self):
        for name in ("horizon", "step", "jump_intensity"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError("%s must be finite" % name)
        if self.horizon <= 0 or self.step <= 0:
            raise ValueError("horizon and step must be positive")
        if self.jump_intensity < 0:
            raise ValueError("jump_intensity must be >= 0")
        if self.jump_intensity > 0 and self.jump_law is None:
            raise ValueError("jump_intensity > 0 requires a jump_law")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ValueError("seed must fit in 64 bits")
        scale = self.scale_vector()
        drift = self.drift_vector()
        if not (np.all(np.isfinite(scale)) and np.all(np.isfinite(drift))):
            raise ValueError("brownian_scale and drift must be finite")
        if self.jump_law is not None and self.jump_law.dimension != self.dimension:
            raise ValueError("jump law dimension does not match path dimension")

    def scale_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.brownian_scale, dtype=float),
                               (self.dimension,)).copy()

    def drift_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.drift, dtype=float),
                               (self.dimension,)).copy()


@dataclass(frozen=True)
class JumpPath:
    """Piecewise-linear continuous part on a grid plus a finite jump ledger.

    grid[0] == 0, grid is strictly increasing, and every jump time is a grid
    point, so Z_{t-} and Z_t are both exactly representable.  Arrays are
    locked read-only after construction.
    """

    grid: np.ndarray
    continuous_values: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_sizes: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        cont = np.asarray(self.continuous_values, dtype=float)
        if cont.ndim == 1:
            cont = cont[:, None]
        jt = np.asarray(self.jump_times, dtype=float)
        js = self.jump_sizes
        js = np.zeros((0, cont.shape[1])) if js is None else np.asarray(js, dtype=float)
        if js.ndim == 1:
            js = js[:, None]
        if grid.ndim != 1 or grid.shape[0] < 2:
            raise ValueError("grid needs at least two points")
        if grid[0] != 0.0:
            raise ValueError("grid must start at 0")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if cont.shape[0] != grid.shape[0]:
            raise ValueError("continuous_values must have one row per grid point")
        if jt.shape[0] != js.shape[0] or js.shape[1] != cont.shape[1]:
            raise ValueError("jump ledger shapes are inconsistent")
        if jt.shape[0]:
            if np.any(np.diff(jt) <= 0):
                raise ValueError("jump times must be strictly increasing")
            if jt[0] <= 0.0 or jt[-1] > grid[-1]:
                raise ValueError("jump times must lie in (0, horizon]")
            if not np.all(np.isin(jt, grid)):
                raise ValueError("every jump time must be a grid point")
        if not (np.all(np.isfinite(grid)) and np.all(np.isfinite(cont))
                and np.all(np.isfinite(js))):
            raise ValueError("path data must be finite")

        idx = np.searchsorted(grid, jt)
        cum = np.zeros_like(cont)
        np.add.at(cum, idx, js)
        cum = np.cumsum(cum, axis=0)
        strict = cum - _scatter(idx, js, cont.shape)

        for arr in (grid, cont, jt, js, cum, strict):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "continuous_values", cont)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_sizes", js)
        object.__setattr__(self, "_jump_grid_index", idx)
        object.__setattr__(self, "_cum_jumps", cum)
        object.__setattr__(self, "_cum_jumps_strict", strict)

    @property
    def dimension(self) -> int:
        return self.continuous_values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    @property
    def values(self) -> np.ndarray:
        """Cadlag values at grid points (jump at t included in Z_t)."""
        return self.continuous_values + self._cum_jumps

    @property
    def left_values(self) -> np.ndarray:
        """Left limits at grid points (jump at t excluded)."""
        return self.continuous_values + self._cum_jumps_strict

    @property
    def jump_mask(self) -> np.ndarray:
        mask = np.zeros(self.grid.shape[0], dtype=bool)
        mask[self._jump_grid_index] = True
        return mask

    def jump_size_at_grid(self) -> np.ndarray:
        """(len(grid), m) array: the jump at each grid point, zero elsewhere."""
        out = np.zeros_like(self.continuous_values)
        out[self._jump_grid_index] = self.jump_sizes
        return out


def _scatter(idx, vals, shape):
    out = np.zeros(shape)
    np.add.at(out, idx, vals)
    return out


def _grid_for(horizon: float, step: float) -> np.ndarray:
    n = max(1, int(np.ceil(horizon / step - 1e-12)))
    grid = np.arange(n, dtype=float) * step
    grid = grid[grid < horizon - 1e-12 * step]
    return np.concatenate([grid, [horizon]])


def sample_levy_jump_diffusion(params: PathParams) -> JumpPath:
    """Draw one jump-diffusion driver path.

    The base uniform grid is augmented with the sampled jump times; Brownian
    increments are then drawn per channel over the merged grid, so the
    continuous part is exact at every grid point.  Bit-identical output for
    identical params (see the substream scheme on ``_substream``).
    """
    T, h, m = params.horizon, params.step, params.dimension
    base = _grid_for(T, h)

    jump_times = np.empty(0)
    jump_sizes = np.zeros((0, m))
    if params.jump_intensity > 0:
        rng_t = _substream(params.seed, 1)
        count = int(rng_t.poisson(params.jump_intensity * T))
        if count:
            jump_times = np.sort(rng_t.uniform(0.0, T, size=count))
            jump_times = np.unique(jump_times[jump_times > 0.0])
            rng_s = _substream(params.seed, 2)
            jump_sizes = params.jump_law.sample(rng_s, jump_times.shape[0])

    grid = np.union1d(base, jump_times)
    if grid[0] != 0.0:
        grid = np.concatenate([[0.0], grid])

    scale = params.scale_vector()
    drift = params.drift_vector()
    dt = np.diff(grid)
    cont = np.empty((grid.shape[0], m))
    for c in range(m):
        if scale[c] == 0.0:
            bm = np.zeros(grid.shape[0])
        else:
            rng_b = _substream(params.seed, 0, c)
            db = rng_b.standard_normal(dt.shape[0]) * np.sqrt(dt)
            bm = np.concatenate([[0.0], np.cumsum(db)])
        cont[:, c] = drift[c] * grid + scale[c] * bm
    return JumpPath(grid=grid, continuous_values=cont,
                    jump_times=jump_times, jump_sizes=jump_sizes)


def deterministic_path(times, values, jumps=()) -> JumpPath:
    """Build a driver from explicit grid samples and a jump list.

    ``values`` are the continuous part at ``times`` (piecewise-linear in
    between); ``jumps`` is a sequence of (time, size) pairs whose times must
    already be grid points in (0, horizon].
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    pairs = list(jumps)
    if pairs:
        jt = np.asarray([p[0] for p in pairs], dtype=float)
        js = np.asarray([np.atleast_1d(np.asarray(p[1], dtype=float)) for p in pairs])
    else:
        jt = np.empty(0)
        js = np.zeros((0, values.shape[1]))
    return JumpPath(grid=times, continuous_values=values,
                    jump_times=jt, jump_sizes=js)


def _interp_continuous(path: JumpPath, t: float) -> np.ndarray:
    out = np.empty(path.dimension)
    for c in range(path.dimension):
        out[c] = np.interp(t, path.grid, path.continuous_values[:, c])
    return out


def value_at(path: JumpPath, t: float) -> np.ndarray:
    """Cadlag value Z_t (jumps with time <= t included)."""
    if not (0.0 <= t <= path.horizon):
        raise ValueError("t outside the path's time interval")
    cont = _interp_continuous(path, t)
    take = path.jump_times <= t
    return cont + path.jump_sizes[take].sum(axis=0)


def left_limit(path: JumpPath, t: float) -> np.ndarray:
    """Left limit Z_{t-} (jumps strictly before t); Z_0 at t=0."""
    if not (0.0 <= t <= path.horizon):
        raise ValueError("t outside the path's time interval")
    cont = _interp_continuous(path, t)
    take = path.jump_times < t
    return cont + path.jump_sizes[take].sum(axis=0)


def increment(path: JumpPath, s: float, t: float) -> np.ndarray:
    """Z_t - Z_s for 0 <= s <= t <= horizon."""
    if s > t:
        raise ValueError("needs s <= t")
    return value_at(path, t) - value_at(path, s)


def jump_at(path: JumpPath, t: float):
    """The jump size at time t, or None when no jump is recorded there."""
    hit = np.nonzero(path.jump_times == t)[0]
    if hit.shape[0] == 0:
        return None
    return path.jump_sizes[hit[0]].copy()


def quadratic_variation_c(path: JumpPath) -> np.ndarray:
    """Per-interval realized QV of the continuous part.

    Returns (len(grid)-1, m, m): the outer product of the continuous
    increment over each grid interval.  Jumps never enter by construction.
    """
    dc = np.diff(path.continuous_values, axis=0)
    return np.einsum("ki,kj->kij", dc, dc)


def refine(path: JumpPath, factor: int) -> JumpPath:
    """Insert factor-1 evenly spaced points inside each grid interval.

    The continuous part is interpolated linearly, so the refined object is
    the same path; jump times and sizes are untouched.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return path
    g, cont = path.grid, path.continuous_values
    w = np.arange(factor, dtype=float)[None, :] / factor          # (1, f)
    times = g[:-1, None] + np.diff(g)[:, None] * w                 # (N, f)
    vals = cont[:-1, None, :] * (1 - w[..., None]) + cont[1:, None, :] * w[..., None]
    new_grid = np.concatenate([times.ravel(), [g[-1]]])
    new_cont = np.concatenate([vals.reshape(-1, path.dimension), cont[-1:, :]])
    return JumpPath(grid=new_grid, continuous_values=new_cont,
                    jump_times=path.jump_times, jump_sizes=path.jump_sizes)


def restrict_uniform(path: JumpPath, factor: int) -> JumpPath:
    """Keep every factor-th grid point of a jump-free path.

    Used to build common-path refinement ladders for strong-order studies;
    requires an empty jump ledger and (len(grid)-1) divisible by factor.
    """
    if path.jump_times.shape[0]:
        raise ValueError("restrict_uniform requires a jump-free path")
    n = path.grid.shape[0] - 1
    if n % factor:
        raise ValueError("interval count not divisible by factor")
    return JumpPath(grid=path.grid[::factor],
                    continuous_values=path.continuous_values[::factor])


def prefix(path: JumpPath, t_end: float, include_jump_at_end: bool = True) -> JumpPath:
    """Restrict the path to [0, t_end] (t_end must be a grid point).

    With include_jump_at_end=False a jump recorded exactly at t_end is
    dropped, which realizes the left-limit path up to t_end.
    """
    k = np.nonzero(path.grid == t_end)[0]
    if k.shape[0] == 0:
        raise ValueError("t_end must be a grid point")
    k = int(k[0])
    if k == 0:
        raise ValueError("prefix needs t_end > 0")
    keep = path.jump_times < t_end
    if include_jump_at_end:
        keep = path.jump_times <= t_end
    return JumpPath(grid=path.grid[:k + 1],
                    continuous_values=path.continuous_values[:k + 1],
                    jump_times=path.jump_times[keep],
                    jump_sizes=path.jump_sizes[keep])


def path_to_csv(path: JumpPath, fh) -> None:
    """Write `time, z_1..z_m, is_jump, dz_1..dz_m` rows at grid points."""
    m = path.dimension
    writer = csv.writer(fh)
    writer.writerow(["time"] + ["z_%d" % (c + 1) for c in range(m)]
                    + ["is_jump"] + ["dz_%d" % (c + 1) for c in range(m)])
    vals = path.values
    mask = path.jump_mask
    dz = path.jump_size_at_grid()
    for k in range(path.grid.shape[0]):
        row = [repr(float(path.grid[k]))]
        row += [repr(float(v)) for v in vals[k]]
        row.append(str(int(mask[k])))
        row += [repr(float(v)) for v in dz[k]]
        writer.writerow(row)
