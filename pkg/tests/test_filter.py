import numpy as np
import pytest

from ddsf import (AssumptionError, FilterConfig, FilterInfeasible, SafetyFilter, SampledSafeSet, Trajectory,
                  benchmark_plant, build_hankel, expand_offline, run_closed_loop,
                  symmetric_box)
from ddsf.filter import W_OFFLINE

from conftest import make_batch
from oracles import backup_input_interval, consistent_initial_state, pinned_input_feasible


def oracle_args(filt, vertices=None):
    V = filt.safe_set.vertices if vertices is None else vertices
    c = filt.cfg
    return (filt.hankel.Hu, filt.hankel.Hy, filt.m, filt.p, c.T_ini, c.N, V,
            *filt.history_arrays(), filt.input_set, filt.output_set)


def sinusoid(steps, period=60):
    return np.sin(2 * np.pi * np.arange(steps) / period)


@pytest.fixture(scope="module")
def grown():
    """Filter and plant after 80 expanding steps under a sinusoid."""
    U = Y = symmetric_box(1.0)
    filt = SafetyFilter.from_data(make_batch(), FilterConfig(), U, Y)
    plant = benchmark_plant(1)
    run_closed_loop(filt, plant, sinusoid(80), expand=True)
    return filt, plant


def test_config_rejects_short_horizon():
    with pytest.raises(ValueError):
        FilterConfig(N=3, T_ini=3)


def test_config_rejects_nonpositive_tolerance():
    with pytest.raises(ValueError):
        FilterConfig(feas_tol=0.0)


def test_from_data_rejects_constant_batch(boxes):
    u = np.full(200, 0.3)
    with pytest.raises(AssumptionError):
        SafetyFilter.from_data(Trajectory(u, benchmark_plant(1).simulate(u)),
                               FilterConfig(), *boxes)


def test_variable_counts_overlapping_terminal(make_filter):
    filt = make_filter(append_terminal=False)
    prob, lay = filt.assemble_qp([0.0])
    n_alpha = 200 - 9 + 1
    assert lay.alpha.stop - lay.alpha.start == n_alpha
    assert lay.u.stop - lay.u.start == 9
    assert lay.y.stop - lay.y.start == 9
    assert lay.beta.stop - lay.beta.start == len(filt.safe_set)
    # implicit model (9 + 9) + history (6) + terminal hull with normalization (7)
    assert np.sum(prob.l == prob.u) == 18 + 6 + 7


def test_variable_counts_appended_terminal(make_filter):
    filt = make_filter()
    prob, lay = filt.assemble_qp([0.0])
    assert lay.alpha.stop - lay.alpha.start == 200 - 12 + 1
    assert np.sum(prob.l == prob.u) == 24 + 6 + 7


def test_history_rows_pin_measurements(make_filter):
    filt = make_filter()
    filt.reset_history([0.1, 0.2, 0.3], [0.0, 0.0, 0.01])
    prob, lay = filt.assemble_qp([0.0])
    past = np.r_[np.arange(lay.u.start, lay.u.start + 3), np.arange(lay.y.start, lay.y.start + 3)]
    rows = [i for i in range(prob.n_cons)
            if prob.l[i] == prob.u[i] and np.count_nonzero(prob.A[i]) == 1
            and np.flatnonzero(prob.A[i])[0] in past]
    assert len(rows) == 6
    np.testing.assert_allclose(sorted(prob.l[rows]), sorted([0.1, 0.2, 0.3, 0.0, 0.0, 0.01]))


def test_equilibrium_is_kept(make_filter):
    u, backup = make_filter().filter_input([0.0])
    assert abs(u[0]) <= 1e-9
    assert backup.objective <= 1e-8


def test_equilibrium_terminal_attenuates(make_filter):
    # terminal window overlapping the horizon pins the first input to rest
    filt = make_filter(append_terminal=False)
    lo, hi = backup_input_interval(*oracle_args(filt))
    u, _ = filt.filter_input([1.0])
    assert abs(u[0]) < 1.0
    assert u[0] == pytest.approx(np.clip(1.0, lo, hi), abs=1e-6)
    assert u[0] == pytest.approx(0.0, abs=1e-6)


def test_appended_terminal_matches_interval_oracle(make_filter):
    filt = make_filter()
    filt.reset_history([0.2, 0.4, 0.6], [0.0, 0.0, 0.0])
    lo, hi = backup_input_interval(*oracle_args(filt))
    for u_l in (-1.0, -0.3, 0.0, 0.5, 1.0):
        u, _ = filt.filter_input([u_l])
        assert u[0] == pytest.approx(np.clip(u_l, lo, hi), abs=1e-4)


def test_projection_onto_feasible_inputs_along_run(make_filter):
    filt = make_filter()
    plant = benchmark_plant(1)
    for t, u_l in enumerate(sinusoid(40)):
        lo, hi = backup_input_interval(*oracle_args(filt))
        rec = filt.step_online(plant, u_l)
        assert rec.u_safe[0] == pytest.approx(np.clip(u_l, lo, hi), abs=1e-6)


def test_grown_set_leaves_small_input_unmodified(grown, make_filter):
    filt = make_filter()
    filt.safe_set = grown[0].safe_set.copy()
    assert pinned_input_feasible(0.1, *oracle_args(filt), margin=1e-6)
    u, _ = filt.filter_input([0.1])
    assert u[0] == pytest.approx(0.1, abs=1e-5)


def test_backup_replays_on_plant(grown):
    filt, plant = grown
    for u_l in (1.0, -1.0, 0.3):
        _, backup = filt.filter_input([u_l])
        sim = plant.copy()
        np.testing.assert_allclose(sim.simulate(backup.u_bar), backup.y_bar, atol=1e-6)


def test_backup_consistent_with_history(grown):
    filt, _ = grown
    _, backup = filt.filter_input([0.8])
    u_h, y_h = filt.history_arrays()
    np.testing.assert_allclose(backup.u_past, u_h, atol=1e-9)
    np.testing.assert_allclose(backup.y_past, y_h, atol=1e-6)
    aug = benchmark_plant(1).augment()
    x0, res = consistent_initial_state(aug, backup.u_past, backup.y_past)
    aug.reset(x0)
    np.testing.assert_allclose(aug.simulate(np.vstack([backup.u_past, backup.u_bar]))[3:],
                               backup.y_bar, atol=1e-6)


def test_backup_invariants(grown):
    filt, _ = grown
    for u_l in (1.0, -1.0, 0.0):
        _, b = filt.filter_input([u_l])
        assert filt.safe_set.contains(b.terminal_state)
        assert b.beta.sum() == pytest.approx(1.0, abs=1e-9)
        assert b.beta.min() >= -1e-9
        N = filt.cfg.N
        assert np.abs(b.u_bar[:N]).max() <= 1 + 1e-7
        assert np.abs(b.y_bar[:N]).max() <= 1 + 1e-7


def test_larger_terminal_set_is_less_conservative(grown, make_filter):
    filt = make_filter()
    V = grown[0].safe_set.vertices
    sub = V[:max(2, len(V) // 3)]
    rng = np.random.default_rng(3)
    compared = 0
    for _ in range(12):
        filt.set_extended_state(sub[rng.integers(len(sub))])
        u_l = [rng.uniform(-1, 1)]
        _, big = filt.filter_input(u_l, vertices=V)
        try:
            _, small = filt.filter_input(u_l, vertices=sub)
        except FilterInfeasible:
            continue    # infinite objective under the smaller set
        compared += 1
        assert big.objective <= small.objective + 1e-8
    assert compared >= 3


def test_condensed_and_full_forms_agree(grown, make_filter):
    full = make_filter(condensed=False)
    full.safe_set = grown[0].safe_set.copy()
    cond = make_filter()
    cond.safe_set = grown[0].safe_set.copy()
    for u_l in (0.9, -0.9):
        assert full.filter_input([u_l])[0] == pytest.approx(cond.filter_input([u_l])[0],
                                                            abs=1e-6)


def test_admm_backend_agrees(grown, make_filter):
    admm = make_filter(backend="admm")
    admm.safe_set = grown[0].safe_set.copy()
    ipm = make_filter()
    ipm.safe_set = grown[0].safe_set.copy()
    for u_l in (0.9, -0.4):
        assert admm.filter_input([u_l])[0] == pytest.approx(ipm.filter_input([u_l])[0],
                                                            abs=1e-4)


def test_first_step_from_rest_does_not_grow(make_filter):
    filt = make_filter()
    rec = filt.step_online(benchmark_plant(1), [0.0])
    assert rec.growth_metric == 0.0
    assert len(filt.safe_set) == 1 and filt.safe_set.generation == 0


def test_closed_loop_is_safe_and_feasible(make_filter):
    filt = make_filter()
    res = run_closed_loop(filt, benchmark_plant(1), sinusoid(300), expand=True)
    u = np.array([r.u_safe for r in res.records])
    y = np.array([r.y for r in res.records])
    assert np.abs(u).max() <= 1 + 1e-7 and np.abs(y).max() <= 1 + 1e-7
    assert all(r.qp_status == "optimal" for r in res.records)


def test_online_generation_is_monotone(make_filter):
    filt = make_filter()
    plant = benchmark_plant(1)
    gens = []
    for u_l in sinusoid(60, period=30):
        filt.step_online(plant, u_l)
        gens.append(filt.safe_set.generation)
    assert np.all(np.diff(gens) >= 0)


def test_offline_expansion_is_nested_and_admissible(boxes):
    U, Y = boxes
    cfg = FilterConfig()
    seed = SampledSafeSet.from_equilibrium(0.0, 0.0, 3, U, Y, novelty_tol=cfg.insert_tol)
    res = expand_offline(build_hankel(make_batch(), cfg.L), cfg, seed, rng_seed=1,
                         max_iter=8, snapshot_iters=[0, 4, 8])
    assert res.iterations == 8
    V = res.safe_set.vertices
    assert np.abs(V).max() <= 1 + 1e-7
    assert len(V) > 1
    for early in (res.snapshots[0], res.snapshots[4]):
        assert all(res.safe_set.contains(v) for v in early)


def test_offline_stops_when_set_is_static(boxes):
    # a set from which only the equilibrium backup exists cannot grow
    U, Y = boxes
    cfg = FilterConfig(append_terminal=False)
    seed = SampledSafeSet.from_equilibrium(0.0, 0.0, 3, U, Y, novelty_tol=cfg.insert_tol)
    res = expand_offline(build_hankel(make_batch(), cfg.L), cfg, seed, rng_seed=0,
                         max_iter=50)
    assert res.converged and res.iterations == W_OFFLINE
