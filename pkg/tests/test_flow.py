import numpy as np
import pytest
from scipy import stats

from ojasub.errors import Diverged, RankDeficient, ShapeMismatch
from ojasub.flow import (
    FlowConfig,
    default_step,
    integrate_flow,
    invariance_residual,
    oja_rhs,
    projector_distance,
    sample_stiefel_uniform,
    stabilizing_shift,
    stiefel_residual,
)
from ojasub.linalg import qr_orthonormalize
from ojasub.subspace import oracle_dominant_subspace

from _helpers import EX_A, PSI1, PSI2, PSI3, random_gapped, unit


def test_rhs_vanishes_for_identity():
    U = sample_stiefel_uniform(5, 2, 3)
    assert np.abs(oja_rhs(U, np.eye(5))).max() < 1e-15


def test_rhs_grows_off_manifold_component():
    dU = oja_rhs(np.array([[0.0], [1.5]]), np.diag([1.0, -1.0]))
    assert dU[1, 0] == pytest.approx(1.5 * (1.5**2 - 1))
    assert dU[0, 0] == 0.0


@pytest.mark.parametrize("a", [0.0, 2.0, 7.5])
def test_rhs_equilibrium_at_dominant_eigenvector(a):
    assert np.abs(oja_rhs(PSI1, EX_A, 1.0, a)).max() < 1e-14


def test_rhs_scales_with_epsilon():
    U = sample_stiefel_uniform(3, 1, 0)
    np.testing.assert_allclose(oja_rhs(U, EX_A, 0.25), 4 * oja_rhs(U, EX_A))


def test_rhs_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        oja_rhs(np.ones((4, 1)), EX_A)


def test_stabilizing_shift_cases():
    assert stabilizing_shift(np.diag([1.0, 2.0]), 0.0) == 0.0
    a = stabilizing_shift(EX_A, 0.53)
    assert a == pytest.approx(2.0, abs=1e-3)
    lam3 = np.linalg.eigvalsh(0.5 * (EX_A + EX_A.T))[0]
    assert lam3 == pytest.approx(-1.47, abs=5e-3)
    assert stabilizing_shift(np.diag([1.0, -1.0]), 1.0) == pytest.approx(2.0)


def test_stabilizing_shift_makes_symmetric_part_pd():
    rng = np.random.default_rng(4)
    for _ in range(20):
        A = rng.standard_normal((6, 6))
        a = stabilizing_shift(A, 0.1)
        assert np.linalg.eigvalsh(0.5 * (A + A.T)) .min() + a >= 0.1 - 1e-12


@pytest.mark.parametrize(
    "kw",
    [dict(epsilon=0.0), dict(epsilon=1.5), dict(step_h=0.0), dict(t_max=-1.0), dict(integrator="midpoint"),
     dict(tol_invariance=0.0), dict(shift_a=-1.0), dict(retract_every=0)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        FlowConfig(**kw)


def test_default_step_formula():
    A = np.diag([30.0, 40.0])
    assert default_step(A, 1.0, 1.0) == pytest.approx(0.1 / (1 + 1 + 50))
    assert default_step(A, 1.0, 0.5) == pytest.approx(0.05 / (1 + 1 + 50))
    assert default_step(np.zeros((2, 2)), 0.0) == 0.01


def test_diagonal_converges_to_e1():
    tr = integrate_flow(np.diag([2.0, 1.0]), unit(np.array([[1.0], [1.0]])), FlowConfig(shift_a=0.0, t_max=40))
    assert tr.converged
    assert np.abs(np.abs(tr.final.matrix[:, 0]) - [1.0, 0.0]).max() < 1e-6


def test_unshifted_example_diverges():
    cfg = FlowConfig(shift_a=0.0, integrator="euler", step_h=0.01, t_max=10.0)
    with pytest.raises(Diverged) as info:
        integrate_flow(np.diag([1.0, -1.0]), np.array([[0.0], [1.5]]), cfg)
    res = info.value.trace.stiefel_residuals
    assert np.all(np.diff(res[:11]) > 0)


def test_shifted_euler_returns_to_manifold():
    U0 = unit(PSI2 + PSI3)
    cfg = FlowConfig(shift_a=2.0, integrator="euler", step_h=0.1, t_max=10.0, stop_on_convergence=False)
    tr = integrate_flow(EX_A, U0, cfg)
    assert tr.stiefel_residuals.max() > 1e-3  # leaves the manifold first
    assert tr.stiefel_residuals[-1] < 1e-3


def test_rank_deficient_start():
    with pytest.raises(RankDeficient):
        integrate_flow(EX_A, np.zeros((3, 1)))


def test_stiefel_residual_values():
    assert stiefel_residual(sample_stiefel_uniform(4, 2, 0)) < 1e-15
    assert stiefel_residual(1.1 * unit(PSI2 + PSI3)) == pytest.approx(0.21, abs=1e-12)


def test_invariance_residual_values():
    assert invariance_residual(PSI1, EX_A) < 1e-14
    assert invariance_residual(np.array([[0.0], [1.0]]), np.diag([2.0, 1.0])) == 0.0
    assert invariance_residual(unit(np.array([[1.0], [1.0]])), np.diag([1.0, 0.0])) == pytest.approx(0.5)


def test_projector_distance_values():
    e1, e2 = np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]])
    assert projector_distance(e1, e1) == 0.0
    assert projector_distance(e1, e2) == pytest.approx(1.0)
    for th in (0.1, 0.7, 2.0):
        v = np.array([[np.cos(th)], [np.sin(th)]])
        assert projector_distance(e1, v) == pytest.approx(abs(np.sin(th)), abs=1e-14)
    assert projector_distance(e1, e2, "fro") == pytest.approx(np.sqrt(2.0))


def test_uniform_sampling_basic():
    Q = sample_stiefel_uniform(4, 4, 1).matrix
    assert abs(abs(np.linalg.det(Q)) - 1.0) < 1e-10
    a, b = sample_stiefel_uniform(3, 1, 1).matrix, sample_stiefel_uniform(3, 1, 2).matrix
    assert not np.allclose(a, b)
    assert abs(np.linalg.norm(a) - 1) < 1e-12 and abs(np.linalg.norm(b) - 1) < 1e-12
    np.testing.assert_array_equal(a, sample_stiefel_uniform(3, 1, 1).matrix)


def test_uniform_sampling_angles_are_uniform():
    angles = np.array([np.arctan2(*sample_stiefel_uniform(2, 1, s).matrix[::-1, 0]) for s in range(1000)])
    counts, _ = np.histogram(angles, bins=12, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 1e-3


def test_rk4_stays_on_manifold():
    rng = np.random.default_rng(5)
    for _ in range(2):
        A = rng.standard_normal((4, 4))
        a = stabilizing_shift(A)
        h = 0.01 / (1 + np.linalg.norm(A + a * np.eye(4)))
        cfg = FlowConfig(shift_a=a, step_h=h, t_max=20.0, stop_on_convergence=False, sample_every=50)
        tr = integrate_flow(A, sample_stiefel_uniform(4, 2, 0), cfg)
        assert tr.stiefel_residuals.max() < 1e-6


def test_stabilized_contraction_envelope():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((5, 5))
    a = stabilizing_shift(A, 0.5)
    lam = np.linalg.eigvalsh(0.5 * (A + A.T) + a * np.eye(5)).min()
    U0 = 1.3 * sample_stiefel_uniform(5, 2, 1).matrix
    alpha = min(1.0, np.linalg.svd(U0, compute_uv=False)[-1])
    h = 1e-3
    cfg = FlowConfig(shift_a=a, step_h=h, t_max=5.0, stop_on_convergence=False, sample_every=10)
    tr = integrate_flow(A, U0, cfg)
    z0 = tr.stiefel_residuals[0] ** 2
    envelope = np.sqrt(z0 * np.exp(-4 * alpha**2 * lam * tr.times))
    assert np.all(tr.stiefel_residuals <= envelope + 10 * h)


def test_equilibrium_is_fixed():
    rng = np.random.default_rng(8)
    A = random_gapped(rng, 7, 3)
    U, _ = oracle_dominant_subspace(A, 3)
    tr = integrate_flow(A, U, FlowConfig(t_max=1.0, stop_on_convergence=False))
    assert projector_distance(tr.final, U) < 1e-8


def test_global_convergence_random_starts():
    rng = np.random.default_rng(9)
    for seed in range(100):
        n = int(rng.integers(3, 11))
        r = int(rng.integers(1, n))
        A = random_gapped(rng, n, r, min_gap=0.5)
        ref, _ = oracle_dominant_subspace(A, r)
        tr = integrate_flow(A, sample_stiefel_uniform(n, r, seed), FlowConfig(sample_every=20))
        assert projector_distance(tr.final, ref) < 1e-5, seed


def test_rate_on_example():
    U0 = unit(PSI1 + PSI2 + PSI3)
    cfg = FlowConfig(shift_a=2.0, step_h=0.01, t_max=20.0, stop_on_convergence=False)
    tr = integrate_flow(EX_A, U0, cfg, reference=PSI1)
    sel = (tr.times >= 5) & (tr.times <= 15)
    slope = np.polyfit(tr.times[sel], np.log(tr.projector_distances[sel]), 1)[0]
    assert slope <= -0.9


def test_trace_shapes_and_csv(tmp_path):
    tr = integrate_flow(EX_A, unit(PSI1 + PSI2), FlowConfig(sample_every=7))
    assert len(tr.times) == len(tr.stiefel_residuals) == len(tr.invariance_residuals)
    assert np.all(np.diff(tr.times) > 0)
    text = tr.to_csv(tmp_path / "trace.csv")
    assert text.splitlines()[0] == "t,stiefel_residual,invariance_residual"
    assert len(text.splitlines()) == len(tr.times) + 1
    assert (tmp_path / "trace.csv").read_text() == text


def test_deterministic():
    U0 = sample_stiefel_uniform(3, 1, 11)
    a = integrate_flow(EX_A, U0).to_csv()
    b = integrate_flow(EX_A, U0).to_csv()
    assert a == b


def test_retraction_keeps_frame_orthonormal():
    cfg = FlowConfig(shift_a=0.0, integrator="euler", step_h=0.1, retract_every=1, t_max=5.0, stop_on_convergence=False)
    tr = integrate_flow(EX_A, qr_orthonormalize(PSI2 + PSI3), cfg)
    assert tr.stiefel_residuals[1:].max() < 1e-12


def test_rate_estimate_reflects_gap():
    tr = integrate_flow(np.diag([3.0, 1.0, 0.0]), sample_stiefel_uniform(3, 1, 2), FlowConfig(tol_invariance=1e-12))
    assert tr.converged
    assert tr.rate_estimate == pytest.approx(-2.0, abs=0.3)
