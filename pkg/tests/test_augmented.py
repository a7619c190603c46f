import numpy as np
import pytest

from dasopt import augmented, graph, metrics, pushsum, schedule


def two_node():
    g = graph.DiGraph(2, frozenset({(0, 1), (1, 0)}))
    return g, graph.build_uniform_weights(g)


# ---------------------------------------------------------------------------
# transition matrices
# ---------------------------------------------------------------------------

def test_sum_matrix_identity_without_in_edges():
    g = graph.DiGraph(2, frozenset({(0, 1)}))
    idx = augmented.AugmentedIndex(g, D=2)
    ev = schedule.Event(k=0, agent=0, delays={})
    C = augmented.build_sum_matrix(idx, ev, {(0, 1): -2})
    assert np.array_equal(C, np.eye(idx.S))


def test_sum_matrix_delay_one_collects_deep_nodes():
    # one-step-stale consumption on a D=2 chain pulls the d=1 and d=2 nodes
    g, w = two_node()
    idx = augmented.AugmentedIndex(g, D=2)
    k = 5
    ev = schedule.Event(k=k, agent=1, delays={0: 1})
    tau = {(0, 1): k - 1, (1, 0): 0}
    C = augmented.build_sum_matrix(idx, ev, tau)
    e = (0, 1)
    for d in (1, 2):
        m = idx.virtual(e, d)
        assert C[1, m] == 1.0 and C[m, m] == 0.0
    fresh = idx.virtual(e, 0)
    assert C[fresh, fresh] == 1.0
    assert np.array_equal(C.sum(axis=0), np.ones(idx.S))


def test_sum_matrix_columns_sum_to_one_randomized():
    g = graph.build_cycle_plus_random(4, 1, seed=0)
    w = graph.build_uniform_weights(g)
    acts = schedule.gen_cyclic_permuted(4, 30, seed=1)
    sched = schedule.gen_uniform_event_delays(acts, g, 3, seed=2)
    aug = augmented.init_augmented(g, np.zeros((4, 1)), sched.certified_D)
    for ev in sched.events:
        for j, d in ev.delays.items():
            e = (j, ev.agent)
            aug.tau[e] = max(aug.tau[e], ev.k - d)
        C = augmented.build_sum_matrix(aug.idx, ev, aug.tau)
        assert np.max(np.abs(C.sum(axis=0) - 1.0)) == 0.0
        aug.k = ev.k + 1


def test_push_matrix_single_agent():
    g = graph.DiGraph(1, frozenset())
    w = graph.WeightMatrices(W=np.ones((1, 1)), A=np.ones((1, 1)), m_bar=1.0)
    idx = augmented.AugmentedIndex(g, D=0)
    S = augmented.build_push_matrix(idx, schedule.Event(k=0, agent=0, delays={}), w)
    assert np.array_equal(S, np.array([[1.0]]))


def test_push_matrix_column_split_and_norms():
    g = graph.build_cycle_plus_random(5, 1, seed=3)
    w = graph.build_uniform_weights(g)
    idx = augmented.AugmentedIndex(g, D=3)
    for agent in range(5):
        ev = schedule.Event(k=0, agent=agent, delays={})
        S = augmented.build_push_matrix(idx, ev, w)
        # active column splits by the column-stochastic weights
        assert S[:, agent].sum() == pytest.approx(1.0, abs=1e-15)
        assert S[agent, agent] == w.A[agent, agent]
        # every column sums to one, rows at the deep node may reach two
        assert np.max(np.abs(S.sum(axis=0) - 1.0)) <= 1e-15
        assert np.max(S.sum(axis=1)) <= 2.0
        assert np.linalg.norm(S, 1) <= 1.0 + 1e-15
        assert np.linalg.norm(S, 2) <= np.sqrt(2.0) + 1e-12


# ---------------------------------------------------------------------------
# augmented dynamics
# ---------------------------------------------------------------------------

def test_hand_computed_two_node_flow():
    # D=1, uniform weights (all entries 1/2). Step 0: agent 0 holds z=4,
    # keeps 2, parks 2 on the edge's fresh virtual node.
    g, w = two_node()
    aug = augmented.init_augmented(g, np.array([[4.0], [0.0]]), D=1)
    ev0 = schedule.Event(k=0, agent=0, delays={1: 0})
    augmented.step_augmented(aug, ev0, w)
    idx = aug.idx
    assert aug.z_hat[0, 0] == pytest.approx(2.0)
    assert aug.z_hat[idx.virtual((0, 1), 0), 0] == pytest.approx(2.0)
    assert aug.z_hat[1, 0] == pytest.approx(0.0)
    # Step 1: agent 1 consumes the parked mass (stamp 1, so delay 0 at k=1),
    # keeps half, parks half back toward agent 0.
    ev1 = schedule.Event(k=1, agent=1, delays={0: 0})
    augmented.step_augmented(aug, ev1, w)
    assert aug.z_hat[1, 0] == pytest.approx(1.0)
    assert aug.z_hat[idx.virtual((1, 0), 0), 0] == pytest.approx(1.0)
    assert float(aug.z_hat.sum()) == pytest.approx(4.0)


def test_mass_identities_with_and_without_perturbation():
    g = graph.build_cycle_plus_random(4, 1, seed=4)
    w = graph.build_uniform_weights(g)
    acts = schedule.gen_cyclic_permuted(4, 50, seed=5)
    sched = schedule.gen_uniform_event_delays(acts, g, 2, seed=6)
    rng = np.random.default_rng(7)
    z0 = rng.normal(size=(4, 1))
    aug = augmented.init_augmented(g, z0, sched.certified_D)
    total = float(z0.sum())
    for ev in sched.events:
        eps = rng.normal(size=1)
        augmented.step_augmented(aug, ev, w, eps)
        total += float(eps[0])
        assert float(aug.z_hat.sum()) == pytest.approx(total, rel=1e-12, abs=1e-12)
        assert float(aug.phi_hat.sum()) == pytest.approx(4.0, abs=1e-12)


def test_equivalence_random_runs():
    rng = np.random.default_rng(8)
    for (I, D, seed) in [(5, 3, 0), (3, 0, 1), (6, 4, 2)]:
        g = graph.build_cycle_plus_random(I, 1, seed=seed)
        w = graph.build_uniform_weights(g)
        acts = schedule.gen_cyclic_permuted(I, 1000 // I + 1, seed=seed + 1)
        sched = schedule.gen_uniform_event_delays(acts, g, D, seed=seed + 2)
        z0 = rng.normal(size=(I, 1))
        st = pushsum.init(g, w, z0, sched.certified_D)
        aug = augmented.init_augmented(g, z0, sched.certified_D)
        worst = 0.0
        for ev in sched.events[:1000]:
            eps = 0.1 * rng.normal(size=1)
            pushsum.step(st, ev, eps)
            augmented.step_augmented(aug, ev, w, eps)
            worst = max(worst, augmented.check_equivalence(st, aug).max_diff)
        assert worst <= 1e-12


def test_equivalence_single_step_is_exact():
    g, w = two_node()
    z0 = np.array([[0.625], [-0.25]])  # exactly representable
    st = pushsum.init(g, w, z0, 1)
    aug = augmented.init_augmented(g, z0, 1)
    ev = schedule.Event(k=0, agent=0, delays={1: 0})
    pushsum.step(st, ev, np.array([0.5]))
    augmented.step_augmented(aug, ev, w, np.array([0.5]))
    assert augmented.check_equivalence(st, aug).max_diff <= 1e-15


# ---------------------------------------------------------------------------
# scrambling bounds
# ---------------------------------------------------------------------------

def test_scrambling_two_node_window():
    g, w = two_node()
    acts = [0, 1] * 30
    sched = schedule.assign_delays(acts, g, schedule.DelayModel(kind="zero"))
    assert (sched.certified_T, sched.certified_D) == (2, 0)
    K1 = (2 * 2 - 1) * 2 + 2 * 0
    assert K1 == 6
    lo, bound = augmented.scrambling_lower_bound(g, w, sched, start=0)
    assert bound == pytest.approx(0.5 ** 6)
    assert lo >= bound


def test_scrambling_single_agent():
    g = graph.DiGraph(1, frozenset())
    w = graph.WeightMatrices(W=np.ones((1, 1)), A=np.ones((1, 1)), m_bar=1.0)
    sched = schedule.assign_delays([0] * 10, g, schedule.DelayModel(kind="zero"))
    lo, bound = augmented.scrambling_lower_bound(g, w, sched, start=0)
    assert lo == 1.0 and bound == 1.0


def test_scrambling_hundred_random_windows():
    count = 0
    for I in (2, 3, 4):
        for s in range(3):
            g = graph.build_cycle_plus_random(I, 0, seed=s)
            w = graph.build_uniform_weights(g)
            acts = schedule.gen_cyclic_permuted(I, 60 * I, seed=s + 1)
            sched = schedule.gen_uniform_event_delays(acts, g, 1, seed=s + 2)
            K1 = (2 * I - 1) * sched.certified_T + I * sched.certified_D
            starts = np.linspace(0, sched.horizon - K1 - 1, 12, dtype=int)
            for start in starts:
                lo, bound = augmented.scrambling_lower_bound(g, w, sched, int(start))
                assert lo >= bound
                count += 1
    assert count >= 100


def test_long_product_envelope_matches_limit_column():
    # the transition product approaches a rank-one column matrix at the
    # closed-form geometric rate (checked as an upper envelope)
    g, w = two_node()
    acts = [0, 1] * 200
    sched = schedule.assign_delays(acts, g, schedule.DelayModel(kind="zero"))
    aug = augmented.init_augmented(g, np.zeros((2, 1)), sched.certified_D)
    mats = [augmented.transition_matrix(aug, ev, w) for ev in sched.events]
    S = mats[0].shape[0]
    tc = metrics.theory_constants(w.m_bar, 2, 2, sched.certified_T,
                                  sched.certified_D, 1.0, 2.0, 1.0)
    P = np.eye(S)
    prods = []
    for M in mats:
        P = M @ P
        prods.append(P.copy())
    xi = prods[-1][:, 0]  # far-product column approximates the limit vector
    for t in (5, 20, 60, 120):
        gap = np.max(np.abs(prods[t] - xi[:, None]))
        assert gap <= tc.C * tc.rho ** (t + 1) + 1e-12


# ---------------------------------------------------------------------------
# consensus-path matrices
# ---------------------------------------------------------------------------

def test_consensus_matrix_structure():
    g, w = two_node()
    D = 2
    ev = schedule.Event(k=4, agent=0, delays={1: 1})
    Wh = augmented.build_consensus_matrix(g, w, ev, {1: 1}, D)
    size = (D + 2) * 2
    assert Wh.shape == (size, size)
    # inactive agent rows are identity
    assert Wh[1, 1] == 1.0 and Wh[1].sum() == 1.0
    # active row mixes own descent slot and the delayed neighbor block
    assert Wh[0, 0] == w.W[0, 0]
    assert Wh[0, 1 + (1 + 1) * 2] == w.W[0, 1]
    assert np.max(np.abs(Wh.sum(axis=1) - 1.0)) <= 1e-15
    # v-history shift rows
    assert Wh[0 + 2, 0] == 1.0  # new v_0 from the perturbed x_0
    assert Wh[1 + 2 * 2, 1 + 2] == 1.0


def test_consensus_path_oracle_matches_engine():
    # evolve the stacked (x, v, v^-1, ..., v^-D) vector with the row-stochastic
    # transitions, feeding it the engine's own descent perturbations; the
    # first block must reproduce the engine's x trajectory exactly
    from dasopt import engine, objectives

    obj = objectives.make_least_squares(5, 4, 3, 0.04, seed=3)
    g = graph.build_cycle_plus_random(5, 1, seed=4)
    w = graph.build_uniform_weights(g)
    acts = schedule.gen_cyclic_permuted(5, 80, seed=5)
    sched = schedule.gen_uniform_event_delays(acts, g, 3, seed=6)
    D = sched.certified_D
    pol = engine.StepSizePolicy.constant(0.7)
    st = engine.init(obj, g, w, np.zeros((5, 4)), D, pol)
    h = np.zeros(((D + 2) * 5, 4))
    h[:5] = st.x
    tau = {e: -D for e in g.edge_list}
    worst = 0.0
    for ev in sched.events:
        i = ev.agent
        delta = -0.7 * st.z[i].copy()
        engine.step(st, ev, pol)
        eff = {}
        for j, d in ev.delays.items():
            e = (j, i)
            tau[e] = max(tau[e], ev.k - d)
            eff[j] = ev.k - tau[e]
        Wh = augmented.build_consensus_matrix(g, w, ev, eff, D)
        perturbed = h.copy()
        perturbed[i] += delta
        h = Wh @ perturbed
        worst = max(worst, float(np.max(np.abs(h[:5] - st.x))))
    assert worst <= 1e-12


def test_consensus_window_product_lower_bound():
    for I, s in [(2, 0), (3, 1), (4, 2)]:
        g = graph.build_cycle_plus_random(I, 0, seed=s)
        w = graph.build_uniform_weights(g)
        acts = schedule.gen_cyclic_permuted(I, 50 * I, seed=s + 1)
        sched = schedule.gen_uniform_event_delays(acts, g, 1, seed=s + 2)
        lo, bound = augmented.consensus_window_product(g, w, sched, start=0)
        assert lo >= bound
        lo2, _ = augmented.consensus_window_product(g, w, sched, start=17)
        assert lo2 >= bound
