"""Acceptance suite: one marked group of tests per criterion.

A PASS/FAIL line per criterion is printed in the terminal summary
(see ``conftest.py``).
"""

import numpy as np
import pytest

from ojasub.flow import FlowConfig, integrate_flow, projector_distance, sample_stiefel_uniform, stabilizing_shift
from ojasub.linalg import eig_ordered, spectral_abscissa, svd_small
from ojasub.lowrank import closed_loop_assemble, design_feedback, design_observer
from ojasub.modred import (
    ctrl_preserving_model,
    dc_gain,
    dual_pair,
    error_decomposition,
    eval_transfer,
    minimal_reduced_model,
    obs_preserving_model,
    slow_fast_reduce,
)
from ojasub.riccati import integrate_riccati, projector_from_linear_flow, riccati_closed_form
from ojasub.subspace import (
    dominant_subspace,
    expand_subspace,
    gap_report,
    oracle_dominant_subspace,
    reduce_subspace_recursive,
    reduce_subspace_schur,
    svd_extract,
)

from _helpers import (
    EX_A,
    PSI1,
    PSI2,
    PSI3,
    example_system,
    planted_unstable,
    proj,
    random_gapped,
    random_system,
    two_timescale,
    unit,
)

TIGHT = FlowConfig(tol_invariance=1e-12, sample_every=10)
# explicit step: well inside the RK4 stability region for these O(1) matrices
FAST = FlowConfig(tol_invariance=1e-10, sample_every=20, step_h=0.02)


def criterion(number, title):
    return pytest.mark.criterion(number, title)


# -- 1 ---------------------------------------------------------------------


@criterion(1, "example extraction rate (RK4, h=0.01, a=2)")
def test_c01_example_extraction_rate():
    U0 = unit(PSI1 + PSI2 + PSI3)
    cfg = FlowConfig(shift_a=2.0, step_h=0.01, t_max=30.0, integrator="rk4", stop_on_convergence=False)
    tr = integrate_flow(EX_A, U0, cfg, reference=PSI1)
    assert tr.projector_distances[-1] < 1e-6
    sel = (tr.times >= 5) & (tr.times <= 15)
    slope = np.polyfit(tr.times[sel], np.log(tr.projector_distances[sel]), 1)[0]
    assert -2.0 <= slope <= -0.9


# -- 2 ---------------------------------------------------------------------


def _first_time_below(tr, level):
    idx = np.flatnonzero(tr.stiefel_residuals < level)
    return tr.times[idx[0]] if idx.size else np.inf


@criterion(2, "Stiefel stabilization with shifts a=2, a=4")
def test_c02_stiefel_stabilization():
    U0 = 1.1 * unit(PSI2 + PSI3)
    cfg = FlowConfig(integrator="euler", step_h=0.01, t_max=10.0, stop_on_convergence=False)
    traces = {a: integrate_flow(EX_A, U0, cfg.with_(shift_a=a)) for a in (2.0, 4.0)}
    for tr in traces.values():
        assert _first_time_below(tr, 1e-8) < 10.0
    assert _first_time_below(traces[4.0], 1e-4) < _first_time_below(traces[2.0], 1e-4)


# -- 3 ---------------------------------------------------------------------


@criterion(3, "unshifted flow leaves the Stiefel manifold")
def test_c03_unshifted_divergence():
    cfg = FlowConfig(integrator="euler", step_h=0.01, t_max=0.1, shift_a=0.0, stop_on_convergence=False)
    tr = integrate_flow(np.diag([1.0, -1.0]), np.array([[0.0], [1.5]]), cfg)
    assert len(tr.stiefel_residuals) == 11
    assert np.all(np.diff(tr.stiefel_residuals) > 0)


# -- 4 ---------------------------------------------------------------------


def _example_points(count=20, seed=4):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < count:
        s = complex(*rng.uniform(-10, 10, 2))
        if abs(s) <= 10 and min(abs(s), abs(s - 1), abs(s + 1)) > 0.1:
            pts.append(s)
    return pts


@pytest.fixture(scope="module")
def example_models():
    sys_ = example_system()
    pair = dual_pair(EX_A, 2, FlowConfig(tol_invariance=1e-12))
    return {
        "obs": obs_preserving_model(sys_, pair),
        "ctrl": ctrl_preserving_model(sys_, pair),
        "minimal": minimal_reduced_model(sys_, pair),
    }


def _relative_errors(model, formula):
    return [abs(eval_transfer(model, s)[0, 0] - formula(s)) / abs(formula(s)) for s in _example_points()]


@criterion(4, "example transfer functions of the reduced models")
def test_c04_observability_model_vanishes(example_models):
    assert max(abs(eval_transfer(example_models["obs"], s)[0, 0]) for s in _example_points()) < 1e-9


@criterion(4, "example transfer functions of the reduced models")
def test_c04_controllability_model_stated_formula(example_models):
    errs = _relative_errors(example_models["ctrl"], lambda s: (2 * s + 1) / (9 * s * (s - 1)))
    assert max(errs) < 1e-8


@criterion(4, "example transfer functions of the reduced models")
def test_c04_minimal_model_stated_formula(example_models):
    errs = _relative_errors(example_models["minimal"], lambda s: (2 * s + 1) / (2 * s * (s - 1)))
    assert max(errs) < 1e-8


# -- 5 ---------------------------------------------------------------------


@criterion(5, "oracle equivalence sweep, 100 random matrices")
def test_c05_oracle_sweep():
    rng = np.random.default_rng(2024)
    failures = []
    for trial in range(100):
        n = int(rng.integers(4, 13))
        r = int(rng.integers(1, 4))
        A = random_gapped(rng, n, r, min_gap=0.3)
        res = dominant_subspace(A, r, FAST.with_(seed=trial))
        ref, _ = oracle_dominant_subspace(A, r)
        dist = projector_distance(res.basis, ref)
        U = res.basis.matrix
        ev = np.sort_complex(np.linalg.eigvals(U.T @ A @ U))
        ev_ref = np.sort_complex(eig_ordered(A).eigenvalues[:r])
        ev_err = np.abs(ev - ev_ref).max()
        if not (dist < 1e-5 and ev_err < 1e-7):
            failures.append((trial, dist, ev_err))
    assert not failures, failures


# -- 6 ---------------------------------------------------------------------


@criterion(6, "Riccati cross-validation of four projector routes")
def test_c06_riccati_routes():
    rng = np.random.default_rng(606)
    worst = 0.0
    for trial in range(25):
        n = int(rng.integers(3, 9))
        r = int(rng.integers(1, n))
        A = rng.standard_normal((n, n))
        a = stabilizing_shift(A, 0.5)
        As = A + a * np.eye(n)
        U0 = sample_stiefel_uniform(n, r, trial).matrix
        flow_cfg = FlowConfig(shift_a=a, step_h=5e-3, stop_on_convergence=False, sample_every=200)
        P_rk, U_flow, t_prev = proj(U0), U0, 0.0
        for t in (0.5, 1.0, 5.0):
            # the integrated routes continue from the previous checkpoint
            P_rk = integrate_riccati(P_rk, As, t - t_prev, step_h=5e-3).P
            U_flow = integrate_flow(A, U_flow, flow_cfg.with_(t_max=t - t_prev)).final.matrix
            t_prev = t
            routes = [riccati_closed_form(As, proj(U0), t).P, P_rk, projector_from_linear_flow(As, U0, t).P, proj(U_flow)]
            for i in range(4):
                for j in range(i + 1, 4):
                    worst = max(worst, np.abs(routes[i] - routes[j]).max())
    assert worst < 1e-5


# -- 7 ---------------------------------------------------------------------


def _singular_value_path(A, U0, chunk=0.05, chunks=60):
    cfg = FlowConfig(shift_a=0.0, step_h=0.005, t_max=chunk, stop_on_convergence=False, sample_every=10)
    U = U0
    path = [np.linalg.svd(U, compute_uv=False)]
    for _ in range(chunks):
        U = integrate_flow(A, U, cfg).final.matrix
        path.append(np.linalg.svd(U, compute_uv=False))
    return np.array(path)


@criterion(7, "monotone singular values for positive definite symmetric part")
def test_c07_singular_value_monotonicity():
    rng = np.random.default_rng(707)
    for trial in range(25):
        n = int(rng.integers(3, 8))
        r = int(rng.integers(1, n))
        M = rng.standard_normal((n, n))
        A = M + stabilizing_shift(M, 0.5) * np.eye(n)
        Q = sample_stiefel_uniform(n, r, trial).matrix
        W = sample_stiefel_uniform(r, r, trial + 1000).matrix
        for lo, hi, sign in ((1.0, 2.0, -1), (0.3, 1.0, +1)):
            U0 = Q @ np.diag(rng.uniform(lo, hi, r)) @ W
            path = _singular_value_path(A, U0)
            steps = np.diff(path, axis=0)
            if sign < 0:
                assert steps.max() <= 1e-6, trial
            else:
                assert steps.min() >= -1e-6, trial
            assert path[:, -1].min() >= min(1.0, path[0, -1]) - 1e-6


# -- 8 ---------------------------------------------------------------------


@criterion(8, "similarity, minimal-form equality and error decompositions")
def test_c08_identities():
    rng = np.random.default_rng(808)
    for _ in range(25):
        n = int(rng.integers(4, 9))
        r = int(rng.integers(1, 4))
        sys_ = random_system(rng, n, int(rng.integers(1, 3)), int(rng.integers(1, 3)), r)
        pair = dual_pair(sys_.A, r, TIGHT)
        R, U, V = pair.coupling, pair.U.matrix, pair.V.matrix
        A_U, A_V = U.T @ sys_.A @ U, V.T @ sys_.A @ V
        assert np.linalg.norm(A_U - np.linalg.solve(R, A_V @ R)) < 1e-7
        mini = minimal_reduced_model(sys_, pair)
        form2 = mini.form2()
        for s in rng.uniform(-3, 3, (5, 2)) @ [1, 1j]:
            a, b = eval_transfer(mini, s), eval_transfer(form2, s)
            assert np.abs(a - b).max() < 1e-9 * (1 + np.abs(a).max())
            for side in ("U", "V"):
                dec = error_decomposition(sys_, pair, s, side)
                assert dec.identity_residual < 1e-9 * (1 + np.abs(dec.P).max())


# -- 9 ---------------------------------------------------------------------


@criterion(9, "low-rank stabilization of planted unstable systems")
def test_c09_lowrank_stabilization():
    rng = np.random.default_rng(909)
    for _ in range(25):
        sys_ = planted_unstable(rng, n=20, m=2, p=2, k=2)
        pair = dual_pair(sys_.A, 2, FAST)
        design = design_feedback(sys_, pair).merge(design_observer(sys_, pair))
        assert design.closed_loop_feedback_abscissa < 0
        assert design.closed_loop_observer_abscissa < 0
        assert design.feedback_split_error < 1e-6
        assert design.observer_split_error < 1e-6
        assert spectral_abscissa(closed_loop_assemble(sys_, design)) < 0


# -- 10 --------------------------------------------------------------------


def _gapped_at(rng, n, cuts):
    while True:
        A = rng.standard_normal((n, n))
        reports = [gap_report(A, k) for k in cuts]
        if all(not g.splits_conjugate_pair and g.gap >= 0.3 for g in reports):
            return A


@criterion(10, "subspace expansion and reduction")
def test_c10_expand_reduce():
    rng = np.random.default_rng(1010)
    for trial in range(25):
        n = int(rng.integers(5, 11))
        r = int(rng.integers(1, 3))
        ell = int(rng.integers(1, 3))
        A = _gapped_at(rng, n, (r, r + ell))
        cfg = FAST.with_(seed=trial)
        U_r = dominant_subspace(A, r, cfg).basis
        big = expand_subspace(A, U_r, ell, cfg)
        assert projector_distance(big.basis, oracle_dominant_subspace(A, r + ell)[0]) < 1e-5
        ref = oracle_dominant_subspace(A, r)[0]
        assert projector_distance(reduce_subspace_schur(A, big.basis, r).basis, ref) < 1e-5
        assert projector_distance(reduce_subspace_recursive(A, big.basis, r, cfg).basis, ref) < 1e-5


@criterion(10, "subspace expansion and reduction")
def test_c10_example_round_trip():
    U1 = dominant_subspace(EX_A, 1, TIGHT).basis
    U2 = expand_subspace(EX_A, U1, 1, TIGHT).basis
    for back in (reduce_subspace_schur(EX_A, U2, 1), reduce_subspace_recursive(EX_A, U2, 1, TIGHT)):
        assert projector_distance(back.basis, PSI1) < 1e-6


# -- 11 --------------------------------------------------------------------


@criterion(11, "singular triplets through the augmented flow")
def test_c11_svd_extraction():
    rng = np.random.default_rng(1111)
    done = 0
    while done < 25:
        m, n = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        r = int(rng.integers(1, min(m, n)))
        A = rng.standard_normal((m, n))
        Uo, so, Vo = svd_small(A)
        if so[r - 1] / so[r] < 1.5:
            continue
        U, V, sigma = svd_extract(A, r, FAST)
        assert projector_distance(U, Uo.matrix[:, :r]) < 1e-5
        assert projector_distance(V, Vo.matrix[:, :r]) < 1e-5
        assert np.linalg.norm(A @ V.matrix - U.matrix * sigma) < 1e-5 * np.linalg.norm(A)
        done += 1


# -- 12 --------------------------------------------------------------------


@criterion(12, "slow model keeps the DC gain")
def test_c12_singular_perturbation_dc_gain():
    rng = np.random.default_rng(1212)
    for _ in range(25):
        n = int(rng.integers(4, 9))
        r = int(rng.integers(1, 3))
        sys_ = two_timescale(rng, n=n, r=r, fast=100.0)
        sf = slow_fast_reduce(sys_, r, FlowConfig(tol_invariance=1e-10, sample_every=20))
        ref = dc_gain(sys_)
        assert np.abs(sf.dc_gain() - ref).max() < 1e-8 * (1 + np.abs(ref).max())
