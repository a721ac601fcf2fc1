"""Canonical jump-SDE solver: exactness, order, invariance, ensembles."""

import io

import numpy as np

from jumpflow.marcus import (MarcusConfig, solve_ensemble, solve_map_batch,
                             solve_point, solve_with_jacobian,
                             trajectory_to_csv)
from jumpflow.odeflow import VectorFieldSet
from jumpflow.reference import matrix_exp
from jumpflow.semimartingale import (JumpLaw, PathParams, deterministic_path,
                                     prefix, sample_levy_jump_diffusion)


def _linear_oracle(A, path, x0):
    dz = path.values - path.values[0]
    return np.stack([matrix_exp(A, float(d)).value @ x0 for d in dz[:, 0]])


def _ramp_with_jumps(step=1e-2):
    grid = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    i = len(grid) - 1
    jumps = [(grid[i // 4], 0.4), (grid[i // 2], -0.3),
             (grid[3 * i // 4], 0.25)]
    return deterministic_path(grid, 0.7 * grid, jumps)


def test_linear_exactness_on_piecewise_linear_driver():
    A = np.array([[0.1, -0.6], [0.6, 0.1]])
    fields = VectorFieldSet.linear(A[None])
    path = _ramp_with_jumps(1e-3)
    x0 = np.array([1.0, 0.0])
    traj = solve_point(fields, path, x0, MarcusConfig())
    err = np.max(np.abs(traj.post - _linear_oracle(A, path, x0)))
    assert err < 1e-4


def test_deterministic_order_two():
    A = np.array([[0.1, -0.6], [0.6, 0.1]])
    fields = VectorFieldSet.linear(A[None])
    x0 = np.array([1.0, 0.0])
    errs = []
    for step in (1e-2, 5e-3, 2.5e-3):
        path = _ramp_with_jumps(step)
        traj = solve_point(fields, path, x0, MarcusConfig())
        errs.append(np.max(np.abs(traj.post - _linear_oracle(A, path, x0))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.min(orders) > 1.8


def test_single_jump_is_exact_exponential():
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    fields = VectorFieldSet.linear(A[None])
    grid = np.linspace(0.0, 1.0, 11)
    path = deterministic_path(grid, np.zeros(11), [(grid[5], 2.0)])
    traj = solve_point(fields, path, np.array([1.0, 0.0]), MarcusConfig())
    expect = matrix_exp(A, 2.0).value @ np.array([1.0, 0.0])
    assert np.max(np.abs(traj.final_state() - expect)) < 1e-12
    # left limit at the jump index still sits at the initial point
    assert np.max(np.abs(traj.pre[5] - [1.0, 0.0])) < 1e-12
    assert bool(traj.is_jump[5])
    assert np.max(np.abs(traj.post[5] - expect)) < 1e-12


def test_sphere_invariance_through_large_jumps():
    def f1(x):
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    def f2(x):
        return np.sin(x[..., 0])[..., None] * np.stack(
            [-x[..., 1], x[..., 0]], axis=-1)

    fields = VectorFieldSet.from_callables(2, [f1, f2], vectorized=True)
    grid = np.linspace(0.0, 1.0, 201)
    rng = np.random.default_rng(5)
    cont = np.stack([0.4 * grid, 0.2 * np.sin(2 * np.pi * grid)], axis=1)
    jumps = [(grid[i], rng.uniform(-np.pi, np.pi, size=2))
             for i in (30, 70, 110, 150, 190)]
    path = deterministic_path(grid, cont, jumps)
    traj = solve_point(fields, path, np.array([1.0, 0.0]), MarcusConfig())
    radii = np.linalg.norm(traj.post, axis=1)
    assert np.max(np.abs(radii - 1.0)) < 1e-6


def test_jacobian_matches_linear_flow():
    A = np.array([[0.1, -0.6], [0.6, 0.1]])
    fields = VectorFieldSet.linear(A[None])
    path = _ramp_with_jumps(1e-3)
    traj = solve_with_jacobian(fields, path, np.array([1.0, 0.0]),
                               MarcusConfig())
    dz = float(path.values[-1, 0] - path.values[0, 0])
    expect = matrix_exp(A, dz).value
    assert np.max(np.abs(traj.jacobians_post[-1] - expect)) < 1e-4


def test_jacobian_matches_finite_differences_nonlinear():
    def f(x):
        return np.stack([np.sin(x[..., 1]), np.cos(x[..., 0])], axis=-1)

    fields = VectorFieldSet.from_callables(2, [f], vectorized=True)
    path = _ramp_with_jumps(2e-3)
    x0 = np.array([0.3, -0.2])
    cfg = MarcusConfig()
    traj = solve_with_jacobian(fields, path, x0, cfg)
    eps = 1e-6
    fd = np.zeros((2, 2))
    for j in range(2):
        d = np.zeros(2)
        d[j] = eps
        plus = solve_point(fields, path, x0 + d, cfg).final_state()
        minus = solve_point(fields, path, x0 - d, cfg).final_state()
        fd[:, j] = (plus - minus) / (2 * eps)
    assert np.max(np.abs(traj.jacobians_post[-1] - fd)) < 1e-6


def test_map_batch_equals_prefix_runs():
    def f(x):
        return np.stack([x[..., 1], -np.sin(x[..., 0])], axis=-1)

    fields = VectorFieldSet.from_callables(2, [f], vectorized=True)
    path = _ramp_with_jumps(2.5e-2)
    bases = np.array([[0.5, 0.0], [0.0, 0.5], [-0.3, 0.4]])
    K = path.grid.shape[0]
    fidx = np.array([K // 4, K // 2, K - 1])
    fside = np.array([0, 1, 1])
    cfg = MarcusConfig()
    states, jacs = solve_map_batch(fields, path, bases, fidx, fside, cfg)
    for r in range(3):
        t = float(path.grid[fidx[r]])
        sub = prefix(path, t, include_jump_at_end=bool(fside[r]))
        ref = solve_with_jacobian(fields, sub, bases[r], cfg)
        pick = ref.post[-1] if fside[r] else ref.pre[-1]
        jpick = (ref.jacobians_post[-1] if fside[r]
                 else ref.jacobians_pre[-1])
        assert np.max(np.abs(states[r] - pick)) == 0.0
        assert np.max(np.abs(jacs[r] - jpick)) == 0.0


def test_random_driver_determinism():
    params = PathParams(horizon=1.0, step=5e-3, brownian_scale=0.5,
                        drift=0.1, jump_intensity=3.0,
                        jump_law=JumpLaw.gaussian(0.0, 0.4), seed=99)
    fields = VectorFieldSet.linear(np.array([[[0.0, -1.0], [1.0, 0.0]]]))
    a = solve_point(fields, sample_levy_jump_diffusion(params),
                    np.array([1.0, 0.0]), MarcusConfig())
    b = solve_point(fields, sample_levy_jump_diffusion(params),
                    np.array([1.0, 0.0]), MarcusConfig())
    assert np.array_equal(a.post, b.post)


def test_commuting_fields_reduce_to_exponential_for_random_driver():
    # [A1, A2] = 0 makes the interpolated solution exp(A1 z1 + A2 z2) x0
    A1 = np.array([[0.3, 0.0], [0.0, -0.2]])
    A2 = np.array([[0.1, 0.0], [0.0, 0.4]])
    fields = VectorFieldSet.linear(np.stack([A1, A2]))
    params = PathParams(horizon=1.0, step=2.5e-3, brownian_scale=(0.3, 0.3),
                        drift=(0.2, -0.1), jump_intensity=2.0,
                        jump_law=JumpLaw.uniform([-0.5, -0.5], [0.5, 0.5]),
                        seed=3, dimension=2)
    path = sample_levy_jump_diffusion(params)
    x0 = np.array([1.0, 2.0])
    traj = solve_point(fields, path, x0, MarcusConfig())
    dz = path.values - path.values[0]
    expect = np.stack([matrix_exp(A1 * d1 + A2 * d2).value @ x0
                       for d1, d2 in dz])
    assert np.max(np.abs(traj.post - expect)) < 5e-3


def test_ensemble_moments_and_observables():
    params = PathParams(horizon=1.0, step=1e-2, brownian_scale=0.4,
                        drift=0.0, jump_intensity=0.0, seed=11)
    fields = VectorFieldSet.linear(np.array([[[1.0]]]))
    obs = {"first": lambda t, x: x[:, 0]}
    summary = solve_ensemble(fields, params, np.array([1.0]), MarcusConfig(),
                             n_paths=400, observables=obs)
    # geometric driver: E x_t = exp(sigma^2 t / 2) for sigma = 0.4
    expect = np.exp(0.5 * 0.16 * summary.times)
    se = np.sqrt(summary.variance[:, 0] / 400)
    gap = np.abs(summary.mean[:, 0] - expect)
    assert np.all(gap <= 4.0 * se + 1e-12)
    assert summary.n_failures == 0
    assert np.array_equal(summary.observable_mean["first"], summary.mean[:, 0])


def test_ensemble_is_reproducible():
    params = PathParams(horizon=0.5, step=1e-2, brownian_scale=0.3,
                        drift=0.0, jump_intensity=1.0,
                        jump_law=JumpLaw.constant([0.2]), seed=21)
    fields = VectorFieldSet.linear(np.array([[[0.5]]]))
    a = solve_ensemble(fields, params, np.array([1.0]), MarcusConfig(),
                       n_paths=16)
    b = solve_ensemble(fields, params, np.array([1.0]), MarcusConfig(),
                       n_paths=16)
    assert np.array_equal(a.mean, b.mean)
    assert np.array_equal(a.variance, b.variance)


def test_trajectory_csv_layout():
    fields = VectorFieldSet.linear(np.array([[[0.0, -1.0], [1.0, 0.0]]]))
    path = _ramp_with_jumps(0.25)
    traj = solve_point(fields, path, np.array([1.0, 0.0]), MarcusConfig())
    buf = io.StringIO()
    trajectory_to_csv(traj, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "time,pre_1,pre_2,post_1,post_2,is_jump"
    assert len(lines) == 1 + traj.times.shape[0]
    parsed = np.array([float(v) for v in lines[-1].split(",")[3:5]])
    assert np.array_equal(parsed, traj.post[-1])
