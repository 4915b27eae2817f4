import math
import warnings

import numpy as np
import pytest

from ddanet.core import (NetworkState, ScheduleError, StepSchedule, centralized_step,
                         composite_distributed_step, deviation_bound_static,
                         deviation_bound_stochastic, distributed_step, init_state, regret_audit,
                         run_dda, step_size, stochastic_comm_run, stochastic_gradient_step,
                         theorem1_rhs, theorem2_schedule, theorem4_expectation_rhs, transfer_audit)
from ddanet.graphs import build_complete, build_cycle, build_grid, build_random_regular
from ddanet.mixing import MixingMatrix, ProtocolSpec, max_degree_chain
from ddanet.objectives import make_median_instance, make_svm_instance, reference_optimum, wrap_noisy
from ddanet.proximal import Regularizer, project, quadratic_setup


def replay(obj, p_entries, sched, T):
    """Plain re-implementation of the recursion keeping the full history."""
    n, d = obj.n, obj.d
    z = np.zeros((n, d))
    x = np.tile(project(np.zeros(d), sched(0), obj.setup), (n, 1))
    xs, devs = [x.copy()], [np.zeros(n)]
    for t in range(1, T + 1):
        g = obj.local_subgradients(x)
        z = p_entries @ z + g
        x = project(z, sched(t), obj.setup)
        xs.append(x.copy())
        devs.append(np.linalg.norm(z.mean(0) - z, axis=1))
    return np.array(xs), np.array(devs)  # index s-1 holds round s


def rhs_from_history(devs, sched, psi, L, T):
    n = devs.shape[1]
    a = np.array([sched(t) for t in range(T + 1)])
    w = a[1:T + 1, None] * devs[:T]
    return (psi / (T * a[T]) + L * L / (2 * T) * a[:T].sum()
            + 2 * L / (n * T) * w.sum() + L / T * w.sum(0).max())


def test_step_size_examples():
    s = StepSchedule("theorem2", R=1, L=1, gap=1)
    assert step_size(1, s) == 0.25
    assert step_size(0, s) == step_size(1, s)
    assert step_size(16, StepSchedule("theorem2", R=1, L=1, gap=0.25)) == pytest.approx(1 / 32)
    a = s.alphas(50)
    assert np.all(np.diff(a) <= 0) and np.all(a > 0)
    with pytest.raises(ScheduleError):
        StepSchedule("theorem2", gap=0.0)
    with pytest.raises(ScheduleError):
        step_size(-1, s)
    with pytest.raises(ScheduleError):
        StepSchedule("constant")
    with pytest.raises(ScheduleError):
        step_size(3, StepSchedule("custom", func=lambda t: -1.0))
    assert StepSchedule("constant", constant=0.3)(7) == 0.3


def test_centralized_abs_fixed_point():
    obj = make_median_instance([0.0], quadratic_setup(1, "ball", radius=1.0))
    s = StepSchedule("theorem2", R=1 / math.sqrt(2), L=1)
    st = init_state(obj.setup, 1, s)
    for _ in range(50):
        centralized_step(st, obj.local_subgradients(st.x)[0], s)
        assert st.x[0, 0] == 0.0


def test_centralized_constant_gradient():
    setup = quadratic_setup(2, "unconstrained")
    s = StepSchedule("theorem2", R=1, L=2)
    st = init_state(setup, 1, s)
    c = np.array([1.0, -1.5])
    for t in range(1, 30):
        centralized_step(st, c, s)
        np.testing.assert_allclose(st.x[0], -s(t) * t * c, atol=1e-14)


def test_ftrl_lemma_direct(rng):
    setup = quadratic_setup(3, "ball", radius=2.0)
    s = StepSchedule("theorem2", R=setup.constraint.diameter_bound, L=1.0)
    st = init_state(setup, 1, s)
    xs, gs = [], []
    for _ in range(100):
        g = rng.standard_normal(3)
        g /= max(1.0, np.linalg.norm(g))
        xs.append(st.x[0].copy())
        gs.append(g)
        centralized_step(st, g, s)
    xs, gs = np.array(xs), np.array(gs)
    a = s.alphas(100)
    for _ in range(10):
        xstar = setup.constraint.euclidean_projection(rng.standard_normal(3) * 2)
        lhs = np.sum(gs @ xstar * -1 + np.einsum("ij,ij->i", gs, xs))
        rhs = 0.5 * np.sum(a[:100] * np.sum(gs ** 2, 1)) + setup.psi(xstar) / a[100]
        assert lhs <= rhs
        l2, r2 = regret_audit(st, s, xstar)
        assert l2 == pytest.approx(lhs, rel=1e-12, abs=1e-12)
        assert r2 == pytest.approx(rhs, rel=1e-12)


def test_two_node_cancellation():
    setup = quadratic_setup(1, "unconstrained")
    s = StepSchedule("theorem2", R=1, L=1)
    st = init_state(setup, 2, s)
    p = MixingMatrix(np.full((2, 2), 0.5))
    distributed_step(st, p, np.array([[1.0], [-1.0]]), s)
    np.testing.assert_array_equal(st.z, [[1.0], [-1.0]])
    assert st.zbar[0] == 0.0
    # consensus thereafter: deviation terms vanish once gradients agree
    st2 = init_state(setup, 2, s)
    for _ in range(10):
        distributed_step(st2, p, np.array([[0.3], [0.3]]), s)
    assert np.all(st2.weighted_dev == 0)
    central = init_state(setup, 1, s)
    for _ in range(10):
        centralized_step(central, np.array([0.3]), s)
    assert theorem1_rhs(st2, s, 0.7) == pytest.approx(theorem1_rhs(central, s, 0.7))


def test_single_node_identity_is_centralized(rng):
    obj = make_svm_instance(1, seed=0)
    s = StepSchedule("theorem2", R=5 / math.sqrt(2), L=1)
    a, b = init_state(obj.setup, 1, s), init_state(obj.setup, 1, s)
    for _ in range(40):
        distributed_step(a, np.eye(1), obj.local_subgradients(a.x), s)
        centralized_step(b, obj.local_subgradients(b.x)[0], s)
        np.testing.assert_array_equal(a.x, b.x)
    T = b.t
    assert theorem1_rhs(b, s, 1.0) == pytest.approx(1.0 / (T * s(T)) + 0.5 / T * s.alphas(T)[:T].sum())


def test_theorem1_audit_c4_median():
    obj = make_median_instance([-1.0, 0.0, 0.0, 1.0])
    p = max_degree_chain(build_cycle(4))
    xs_, f_star = reference_optimum(obj)
    s = theorem2_schedule(obj, p)
    psi = float(obj.setup.psi(xs_))
    rec, st = run_dda(obj, p, s, 4999, f_star=f_star, psi_xstar=psi)
    assert len(rec.eval_t) == 500
    assert all(e <= b for e, b in zip(rec.max_error, rec.bound))
    xs, devs = replay(obj, p.entries, s, 4999)
    T = st.t
    np.testing.assert_allclose(st.x_hat, xs.sum(0) / T, atol=1e-12)
    assert rec.bound[-1] == pytest.approx(rhs_from_history(devs, s, psi, obj.L, T), rel=1e-10)


@pytest.mark.parametrize("g,seed", [(build_cycle(8), 0), (build_grid(3), 1), (build_random_regular(10, 3, seed=2), 2)])
def test_state_invariants_and_transfer(g, seed):
    obj = make_svm_instance(g.n, seed=seed)
    p = max_degree_chain(g)
    s = theorem2_schedule(obj, p)
    _, f_star = reference_optimum(obj)
    st = init_state(obj.setup, g.n, s)
    for _ in range(400):
        distributed_step(st, p, obj.local_subgradients(st.x), s)
        np.testing.assert_allclose(st.zbar, st.z.mean(0), atol=1e-10)
        assert obj.setup.constraint.contains(st.x)
    assert st.mean_residual <= 1e-10
    for i in range(g.n):
        a = transfer_audit(st, obj, f_star, obj.L, i)
        assert a["lhs"] <= a["rhs"] + 1e-12
        assert a["lhs"] <= a["rhs_prev_step"] + 1e-12


def test_deviation_bound_formula_and_audit():
    assert deviation_bound_static(100, 4, 0.0, 1.0) == pytest.approx(2 * math.log(200) + 3)
    vals = [deviation_bound_static(50, 8, s, 1.0) for s in (0.1, 0.5, 0.9)]
    assert vals == sorted(vals)
    with pytest.raises(ValueError):
        deviation_bound_static(10, 4, 1.0, 1.0)
    g = build_cycle(8)
    p = max_degree_chain(g)
    obj = make_svm_instance(8, seed=5)
    s = theorem2_schedule(obj, p)
    rec, st = run_dda(obj, p, s, 1000, deviation_bound=deviation_bound_static(1001, 8, p.sigma2, 1.0))
    assert rec.deviation_violation_rounds == 0
    assert st.max_deviation <= deviation_bound_static(st.t, 8, p.sigma2, obj.L)


def test_stochastic_bounds_formulas():
    assert deviation_bound_stochastic(10, 4, 0.5, 1.0) == pytest.approx(
        12 * math.log(400) + 1 / 20 + 2)
    s = StepSchedule("theorem2", R=1, L=1, gap=0.5)
    a = s.alphas(20)
    got = theorem4_expectation_rhs(20, 4, 0.5, 1.0, s, 0.3)
    want = 0.3 / (20 * a[20]) + 8 / 20 * a[:20].sum() + 3 / 20 * math.log(40) / 0.5 * a[1:].sum()
    assert got == pytest.approx(want)


def test_failure_zero_matches_static():
    g = build_cycle(6)
    obj = make_svm_instance(6, seed=3)
    p = max_degree_chain(g)
    s = theorem2_schedule(obj, p)
    spec = ProtocolSpec("edge-failure", g, failure_prob=0.0, lazy=False)
    r1, s1 = run_dda(obj, spec, s, 300, f_star=0.0, rng=9)
    r2, s2 = run_dda(obj, p, s, 300, f_star=0.0, rng=9)
    np.testing.assert_array_equal(s1.z, s2.z)
    assert r1.max_error == r2.max_error


def test_mean_evolution_all_protocols(rng):
    g = build_grid(3)
    obj = make_svm_instance(9, seed=1)
    s = StepSchedule("theorem2", R=5 / math.sqrt(2), L=1, gap=0.1)
    for kind in ("static", "gossip", "edge-inclusion", "edge-failure"):
        spec = ProtocolSpec(kind, g, failure_prob=0.3)
        _, st = run_dda(obj, spec, s, 300, rng=rng)
        assert st.mean_residual <= 1e-10


def test_gossip_complete_faster_than_cycle():
    obj = make_svm_instance(16, seed=4)
    _, f_star = reference_optimum(obj)
    hits = {}
    for name, g in (("complete", build_complete(16)), ("cycle", build_cycle(16))):
        spec = ProtocolSpec("gossip", g)
        from ddanet.mixing import gram_lambda2
        s = StepSchedule("theorem2", R=obj.setup.constraint.diameter_bound, L=1,
                         gap=1 - gram_lambda2(spec))
        rec, _ = run_dda(obj, spec, s, 400_000, f_star=f_star, rng=1, epsilon=0.2)
        assert rec.hit_eps_at is not None
        hits[name] = rec.hit_eps_at
    assert hits["cycle"] > hits["complete"]


def test_stochastic_comm_run_records():
    obj = make_median_instance([-1.0, 0.5, 2.0])
    spec = ProtocolSpec("gossip", build_complete(3))
    s = StepSchedule("theorem2", R=obj.setup.constraint.diameter_bound, L=1, gap=0.5)
    rec = stochastic_comm_run(spec, obj, s, 200, rng=3)
    assert rec.rounds == 200
    assert 0 <= rec.violation_frequency <= 1
    assert rec.metadata["protocol"] == "gossip"
    with pytest.raises(ValueError):
        deviation_bound_stochastic(10, 3, 1.0, 1.0)


def test_zero_noise_matches_exact():
    obj = make_svm_instance(8, seed=2)
    p = max_degree_chain(build_cycle(8))
    s = theorem2_schedule(obj, p)
    orc = wrap_noisy(obj, "additive-uniform", 0.0, rng=0)
    a, b = init_state(obj.setup, 8, s), init_state(obj.setup, 8, s)
    for _ in range(100):
        distributed_step(a, p, obj.local_subgradients(a.x), s)
        stochastic_gradient_step(b, p, orc.local_subgradients(b.x), s)
    np.testing.assert_array_equal(a.z, b.z)


def test_noise_increases_error():
    obj = make_median_instance(np.linspace(-1, 1, 8))
    p = max_degree_chain(build_cycle(8))
    _, f_star = reference_optimum(obj)
    means = []
    for scale in (0.0, 2.0, 8.0):
        errs = []
        for r in range(30):
            orc = wrap_noisy(obj, "additive-uniform", scale, rng=100 + r)
            # one schedule for every noise level so the runs stay paired
            s = StepSchedule("theorem2", R=obj.setup.constraint.diameter_bound, L=1.0, gap=p.gap)
            rec, _ = run_dda(obj, p, s, 500, f_star=f_star, oracle=orc, eval_every=500)
            errs.append(rec.final_error)
        means.append(np.mean(errs))
    assert means[0] <= means[1] <= means[2]


def test_composite_reg_none_matches():
    obj = make_svm_instance(8, seed=1)
    p = max_degree_chain(build_cycle(8))
    s = theorem2_schedule(obj, p)
    a, b = init_state(obj.setup, 8, s), init_state(obj.setup, 8, s)
    for _ in range(100):
        distributed_step(a, p, obj.local_subgradients(a.x), s)
        composite_distributed_step(b, p, obj.local_subgradients(b.x), s, Regularizer())
    np.testing.assert_array_equal(a.x, b.x)
    with pytest.raises(ValueError):
        composite_distributed_step(b, p, obj.local_subgradients(b.x), s, Regularizer("l1", 0.1))


def test_composite_large_weight_pins_zero():
    obj = make_median_instance([0.3, -0.2, 0.5, 0.1])
    p = max_degree_chain(build_cycle(4))
    s = theorem2_schedule(obj, p)
    reg = Regularizer("l1", 5.0)
    st = init_state(obj.setup, 4, s, reg)
    for _ in range(200):
        composite_distributed_step(st, p, obj.local_subgradients(st.x), s, reg)
        assert np.all(st.x == 0)
    with pytest.raises(ValueError):
        distributed_step(st, p, obj.local_subgradients(st.x), s)


def test_composite_improves_regularized_objective(rng):
    obj = make_svm_instance(8, 5, seed=6)
    reg = Regularizer("l1", 0.1)
    p = max_degree_chain(build_cycle(8))
    s = theorem2_schedule(obj, p)
    st = init_state(obj.setup, 8, s, reg)
    for _ in range(2000):
        composite_distributed_step(st, p, obj.local_subgradients(st.x), s, reg)
    F = obj.values(st.x_hat) + reg(st.x_hat)
    assert np.all(F < obj.value(np.zeros(5)))
    # regret bound of the averaged sequence
    for _ in range(10):
        xs = obj.setup.constraint.euclidean_projection(rng.standard_normal(5) * 3)
        lhs, rhs = regret_audit(st, s, xs)
        assert lhs <= rhs


def test_label_equivariance():
    g = build_random_regular(10, 3, seed=4)
    obj = make_svm_instance(10, seed=8)
    p = max_degree_chain(g)
    perm = np.random.default_rng(0).permutation(10)
    from ddanet.objectives import HingeObjective
    obj_p = HingeObjective(obj.features[perm], obj.labels[perm], obj.setup)
    p_p = MixingMatrix(p.entries[np.ix_(perm, perm)])
    s = theorem2_schedule(obj, p)
    a, b = init_state(obj.setup, 10, s), init_state(obj.setup, 10, s)
    for _ in range(200):
        distributed_step(a, p, obj.local_subgradients(a.x), s)
        distributed_step(b, p_p, obj_p.local_subgradients(b.x), s)
    np.testing.assert_allclose(a.z[perm], b.z, atol=1e-12)


def test_determinism_and_csv():
    obj = make_svm_instance(9, seed=2)
    spec = ProtocolSpec("edge-inclusion", build_grid(3))
    s = StepSchedule("theorem2", R=obj.setup.constraint.diameter_bound, L=1, gap=0.2)
    r1, _ = run_dda(obj, spec, s, 300, f_star=0.1, rng=5, psi_xstar=1.0, seed=5)
    r2, _ = run_dda(obj, spec, s, 300, f_star=0.1, rng=5, psi_xstar=1.0, seed=5)
    assert r1.to_csv() == r2.to_csv()
    lines = r1.to_csv().splitlines()
    assert lines[0] == "t,max_error,max_deviation,bound" and len(lines) == 31
    assert len(r1.eval_t) == len(r1.max_error) == len(r1.bound) == len(r1.node_deviation)


def test_kernel_matches_step_path():
    from ddanet import _kernels as K
    for g, obj in ((build_cycle(12), make_svm_instance(12, seed=3)),
                   (build_grid(3), make_median_instance(np.linspace(-2, 2, 9)))):
        p = max_degree_chain(g)
        s = theorem2_schedule(obj, p)
        _, f_star = reference_optimum(obj)
        rec, st = run_dda(obj, p, s, 2999, f_star=f_star)
        kind = K.HINGE if obj.kind == "hinge" else K.ABS
        data = obj._signed if obj.kind == "hinge" else obj.targets[:, None].copy()
        t_hit, err, last = K.dda_static_run(kind, data, p.entries, obj.setup.constraint.radius,
                                            s.R * math.sqrt(s.gap) / (4 * s.L), 3000, 10, -1.0, f_star)
        assert t_hit == -1 and last == rec.eval_t[-1] == 3000
        assert err == pytest.approx(rec.final_error, abs=1e-10)
        eps = rec.max_error[len(rec.max_error) // 2]
        first = rec.eval_t[next(i for i, e in enumerate(rec.max_error) if e <= eps)]
        t_hit, _, _ = K.dda_static_run(kind, data, p.entries, obj.setup.constraint.radius,
                                       s.R * math.sqrt(s.gap) / (4 * s.L), 3000, 10, eps, f_star)
        assert t_hit == first


def test_state_copy_independent():
    obj = make_median_instance([0.0, 1.0])
    s = StepSchedule("theorem2", R=1, L=1)
    st = init_state(obj.setup, 2, s)
    c = st.copy()
    distributed_step(st, np.full((2, 2), 0.5), obj.local_subgradients(st.x), s)
    assert c.t == 1 and np.all(c.z == 0)
    assert isinstance(c, NetworkState)


def test_norm_violation_warns():
    setup = quadratic_setup(1, "unconstrained")
    s = StepSchedule("theorem2", R=1, L=1)
    st = init_state(setup, 1, s)
    with pytest.warns(RuntimeWarning):
        centralized_step(st, np.array([2.0]), s)
    assert st.norm_violations == 1
    with pytest.raises(ValueError):
        distributed_step(st, np.eye(2), np.zeros((1, 1)), s)


def test_noisy_steps_skip_norm_check():
    setup = quadratic_setup(1, "unconstrained")
    s = StepSchedule("theorem2", R=1, L=1)
    st = init_state(setup, 1, s)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        stochastic_gradient_step(st, np.eye(1), np.array([[5.0]]), s)
    assert st.norm_violations == 0 and st.z[0, 0] == 5.0
