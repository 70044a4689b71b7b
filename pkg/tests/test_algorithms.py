import hashlib
from dataclasses import replace

import numpy as np
import pytest

from mimefl.algorithms import (
    AlgoConfig,
    ServerRoundState,
    comm_cost,
    fedavg_round,
    fedprox_client_step,
    init_server_state,
    local_batches,
    loc_mime_round,
    mime_client_update,
    mimelite_client_update,
    mvr_client_update,
    mvr_momentum_update,
    run_round,
    run_rounds,
    sample_clients,
    scaffold_round,
    server_only_round,
    theory_schedule,
    warmup_momentum,
)
from mimefl.base_opt import AdamState, OptimizerSpec, init_state
from mimefl.core import ContractViolation, RngStream
from mimefl.problems import (
    QuadraticClient,
    QuadraticPopulation,
    QuadraticSpec,
    estimate_G,
    make_quadratic_population,
)

SGD = OptimizerSpec("SGD")
SGDM = OptimizerSpec("SGDm", beta=0.9)


def _scalar(center=1.0, curvature=1.0, n=1, id=0):
    return QuadraticClient.centered(id, [[curvature]], [center], n=n)


def _identical_population(N=4, d=3, n=4):
    gen = np.random.default_rng(1)
    A = gen.standard_normal((d, d))
    A = A @ A.T / d + np.eye(d)
    b = gen.standard_normal((n, d))
    return QuadraticPopulation([QuadraticClient(i, A, b) for i in range(N)])


# --- client updates ------------------------------------------------------------

def test_mime_first_step_is_control_variate(noisy_quadratic):
    x = np.ones(noisy_quadratic.dim)
    c = np.full(noisy_quadratic.dim, 0.3)
    ys = [mime_client_update(x, init_state(SGD, x.size), c, cl, 1, 0.1, SGD, [None])[0]
          for cl in noisy_quadratic.clients]
    assert all(np.array_equal(y, ys[0]) for y in ys)
    assert np.allclose(ys[0], x - 0.1 * c, rtol=0, atol=1e-15)


def test_mime_corrected_gradient_by_hand():
    client = _scalar(1.0)
    y, x, c = np.array([0.5]), np.array([0.0]), np.array([0.2])
    g = client.grad(y) - client.grad(x) + c
    assert g == pytest.approx([0.7])
    assert (y - 0.1 * g) == pytest.approx([0.43])


def test_mime_zero_function_fixed_point():
    zero = QuadraticClient(0, [[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0]])
    x = np.array([1.0, -2.0])
    y, _, drift = mime_client_update(x, init_state(SGD, 2), np.zeros(2), zero, 5, 0.3, SGD, [None] * 5)
    assert np.array_equal(y, x) and drift == 0.0


def test_mimelite_two_steps_by_hand():
    y, full_x, _ = mimelite_client_update(np.array([0.0]), init_state(SGD, 1), _scalar(1.0), 2, 0.5, SGD, [None] * 2)
    assert y.tolist() == [0.75]
    assert full_x.tolist() == [-1.0]


def test_mimelite_at_client_optimum_stays():
    y, _, _ = mimelite_client_update(np.array([1.0]), init_state(SGD, 1), _scalar(1.0), 3, 0.5, SGD, [None] * 3)
    assert y.tolist() == [1.0]


def test_mimelite_sgd_is_local_sgd(noisy_quadratic):
    from mimefl.algorithms import local_sgd

    client = noisy_quadratic.clients[0]
    x = np.linspace(-1, 1, client.dim)
    batches = [np.array([0, 1]), np.array([2, 3]), np.array([1, 2])]
    a = mimelite_client_update(x, init_state(SGD, client.dim), client, 3, 0.1, SGD, batches)[0]
    b = local_sgd(x, client, 0.1, batches)[0]
    assert np.array_equal(a, b)


def test_mvr_direction_by_hand():
    # grad at y is y, so grad(y)=2, grad(anchor)=1.5
    client = _scalar(0.0)
    y, _ = mvr_client_update(np.array([2.0]), np.array([1.5]), np.array([1.0]), np.array([1.6]),
                             client, 1, 1.0, 0.5, [None])
    assert y == pytest.approx([2.0 - 1.8])


def test_mvr_a_one_is_mime_sgd(noisy_quadratic):
    client = noisy_quadratic.clients[2]
    x = np.linspace(-1, 1, client.dim)
    c = np.full(client.dim, 0.2)
    batches = [np.array([0, 1]), np.array([2, 3])]
    a = mvr_client_update(x, x, np.full(client.dim, 5.0), c, client, 2, 0.1, 1.0, batches)[0]
    b = mime_client_update(x, init_state(SGD, client.dim), c, client, 2, 0.1, SGD, batches)[0]
    assert np.max(np.abs(a - b)) <= 1e-12


def test_mvr_a_zero_identical_clients_telescopes():
    pop = _identical_population()
    client = pop.clients[0]
    x_curr, anchor = np.ones(pop.dim), np.zeros(pop.dim)
    m = pop.gradient(anchor)
    y, _ = mvr_client_update(x_curr, anchor, m, None, client, 1, 0.1, 0.0, [None])
    assert np.max(np.abs(y - (x_curr - 0.1 * pop.gradient(x_curr)))) <= 1e-12


@pytest.mark.parametrize("a, m_prev, g_curr, g_prev, expected", [
    (0.5, 1.0, 2.0, 1.5, 1.75),
    (1.0, 9.0, 2.0, -3.0, 2.0),
    (0.2, 1.0, 3.0, 3.0, 0.2 * 3.0 + 0.8 * 1.0),
])
def test_momentum_update_by_hand(a, m_prev, g_curr, g_prev, expected):
    m = mvr_momentum_update(np.array([m_prev]), [np.array([g_curr])], [np.array([g_prev])], a)
    assert m == pytest.approx([expected])


def test_momentum_update_length_mismatch():
    with pytest.raises(ContractViolation):
        mvr_momentum_update(np.zeros(1), [np.zeros(1)], [], 0.5)


def test_warmup_identical_clients_is_exact():
    pop = _identical_population()
    x0 = np.ones(pop.dim)
    m0 = warmup_momentum(pop, x0, 2, 3, RngStream(0))
    assert np.max(np.abs(m0 - pop.gradient(x0))) <= 1e-12


def test_warmup_covering_population_is_exact(noisy_quadratic):
    x0 = np.ones(noisy_quadratic.dim)
    m0 = warmup_momentum(noisy_quadratic, x0, 4, 3, RngStream(1))
    assert np.max(np.abs(m0 - noisy_quadratic.gradient(x0))) <= 1e-12


def test_warmup_variance(noisy_quadratic):
    x0 = np.zeros(noisy_quadratic.dim)
    S, T0 = 2, 2
    full = noisy_quadratic.gradient(x0)
    errs = [np.sum((warmup_momentum(noisy_quadratic, x0, S, T0, RngStream(s)) - full) ** 2) for s in range(1000)]
    assert np.mean(errs) <= 1.5 * estimate_G(noisy_quadratic, [x0]) / (S * T0)


@pytest.mark.parametrize("y, x, g, eta, mu, expected", [
    ([1.0], [0.0], [2.0], 0.1, 0.0, [0.8]),
    ([1.0], [0.0], [0.0], 0.1, 2.0, [0.8]),
    ([1.0], [1.0], [3.0], 0.1, 5.0, [0.7]),
])
def test_fedprox_step(y, x, g, eta, mu, expected):
    out = fedprox_client_step(np.array(y), np.array(x), np.array(g), eta, mu)
    assert out == pytest.approx(expected)


# --- sampling and batching -----------------------------------------------------------

def test_sample_clients_distinct_and_reproducible():
    a = sample_clients(10, 4, RngStream(3))
    assert len(set(a.tolist())) == 4
    assert np.array_equal(a, sample_clients(10, 4, RngStream(3)))
    with pytest.raises(ContractViolation):
        sample_clients(3, 4, RngStream(0))


def test_participation_count_for_large_population():
    N, S, T = 3400, 20, 1000
    counts = np.zeros(N)
    for t in range(T):
        counts[sample_clients(N, S, RngStream(0).child(t))] += 1
    assert counts.mean() == pytest.approx(5.9, abs=0.05)


def test_local_batches_cover_epochs():
    batches = local_batches(8, 4, 4, "steps", np.random.default_rng(0))
    assert len(batches) == 4
    first_epoch = np.sort(np.concatenate(batches[:2]))
    assert first_epoch.tolist() == list(range(8))
    assert len(local_batches(8, 2, 4, "epochs", np.random.default_rng(0))) == 4
    assert local_batches(8, 3, None, "steps", np.random.default_rng(0)) == [None] * 3


# --- rounds ------------------------------------------------------------------------

@pytest.mark.parametrize("algorithm", ["Mime", "MimeLite", "FedAvg", "Scaffold", "FedProx", "LocMime"])
def test_zero_local_steps_is_noop(noisy_quadratic, algorithm):
    cfg = AlgoConfig(algorithm, SGD, eta=0.1, K=0, S=3)
    x0 = np.ones(noisy_quadratic.dim)
    st = init_server_state(cfg, noisy_quadratic, x0)
    new, rec = run_round(cfg, st, noisy_quadratic, RngStream(0))
    assert np.array_equal(new.x, x0) and rec.drift == 0.0


def test_too_many_clients(noisy_quadratic):
    cfg = AlgoConfig("Mime", SGD, S=noisy_quadratic.N + 1)
    with pytest.raises(ContractViolation):
        run_round(cfg, init_server_state(cfg, noisy_quadratic, np.zeros(noisy_quadratic.dim)),
                  noisy_quadratic, RngStream(0))


def test_state_shape_checked(noisy_quadratic):
    cfg = AlgoConfig("MimeMVR", SGD, S=2)
    st = ServerRoundState(np.zeros(noisy_quadratic.dim), init_state(SGD, noisy_quadratic.dim))
    with pytest.raises(ContractViolation):
        run_round(cfg, st, noisy_quadratic, RngStream(0))


@pytest.mark.parametrize("seed", range(3))
def test_mimelite_sgd_equals_fedavg(noisy_quadratic, seed):
    cfg = AlgoConfig("MimeLite", SGD, eta=0.05, K=3, S=4, batch_size=2)
    x0 = np.ones(noisy_quadratic.dim)
    a, _ = run_rounds(cfg, noisy_quadratic, x0, 20, seed)
    b, _ = run_rounds(replace(cfg, algorithm="FedAvg"), noisy_quadratic, x0, 20, seed)
    assert np.max(np.abs(a.x - b.x)) <= 1e-12


def test_fedavg_sgd_server_returns_mean_iterate(noisy_quadratic):
    cfg = AlgoConfig("FedAvg", SGD, eta=0.05, K=3, S=4)
    st = init_server_state(cfg, noisy_quadratic, np.zeros(noisy_quadratic.dim))
    new, _ = fedavg_round(cfg, st, noisy_quadratic, RngStream(2))
    ids = np.sort(sample_clients(noisy_quadratic.N, 4, RngStream(2).child(0)))
    from mimefl.algorithms import local_sgd

    ys = [local_sgd(st.x, noisy_quadratic.clients[i], 0.05, [None] * 3)[0] for i in ids]
    assert np.max(np.abs(new.x - np.mean(ys, axis=0))) <= 1e-12


def test_fedavg_single_step_equals_server_only(noisy_quadratic):
    cfg = AlgoConfig("FedAvg", SGD, eta=0.05, K=1, S=4)
    st = init_server_state(cfg, noisy_quadratic, np.ones(noisy_quadratic.dim))
    a, _ = fedavg_round(cfg, st, noisy_quadratic, RngStream(5))
    b, _ = server_only_round(cfg, st, noisy_quadratic, RngStream(5))
    assert np.max(np.abs(a.x - b.x)) <= 1e-12


@pytest.mark.parametrize("base", [SGD, SGDM, OptimizerSpec("Adagrad")])
def test_server_only_equals_mime_single_full_step(noisy_quadratic, base):
    cfg = AlgoConfig("Mime", base, eta=0.05, K=1, S=4)
    x0 = np.ones(noisy_quadratic.dim)
    a, _ = run_rounds(cfg, noisy_quadratic, x0, 5, 0)
    b, _ = run_rounds(replace(cfg, algorithm="ServerOnly"), noisy_quadratic, x0, 5, 0)
    assert np.max(np.abs(a.x - b.x)) <= 1e-12


def test_server_only_sgdm_by_hand(two_client_drift):
    cfg = AlgoConfig("ServerOnly", SGDM, eta=0.5, S=2)
    st = init_server_state(cfg, two_client_drift, np.array([0.0]))
    new, _ = run_round(cfg, st, two_client_drift, RngStream(0))
    g = 0.5 * (3 * (0 - 1) + (0 + 1))
    assert new.x == pytest.approx([-0.5 * 0.1 * g])
    assert new.s.m == pytest.approx([0.1 * g])


def test_server_only_zero_gradient_fixed_point(two_client_drift):
    cfg = AlgoConfig("ServerOnly", SGD, eta=0.5, S=2)
    st = init_server_state(cfg, two_client_drift, np.array([0.5]))
    new, _ = run_round(cfg, st, two_client_drift, RngStream(0))
    assert new.x.tolist() == [0.5]


def test_mime_identical_clients_runs_gradient_descent():
    pop = _identical_population()
    cfg = AlgoConfig("Mime", SGD, eta=0.1, K=4, S=2)
    x = np.ones(pop.dim)
    new, _ = run_round(cfg, init_server_state(cfg, pop, x), pop, RngStream(0))
    y = x.copy()
    for _ in range(4):
        y = y - 0.1 * pop.gradient(y)
    assert np.max(np.abs(new.x - y)) <= 1e-12


def test_scaffold_identical_clients_matches_fedavg():
    # with every client refreshed each round on the full batch, c_i == c_server throughout
    pop = _identical_population()
    cfg = AlgoConfig("Scaffold", SGD, eta=0.05, K=4, S=pop.N)
    x0 = np.ones(pop.dim)
    a, _ = run_rounds(cfg, pop, x0, 10, 0)
    b, _ = run_rounds(replace(cfg, algorithm="FedAvg"), pop, x0, 10, 0)
    assert np.max(np.abs(a.x - b.x)) <= 1e-9


def test_scaffold_first_round_matches_fedavg(noisy_quadratic):
    cfg = AlgoConfig("Scaffold", SGD, eta=0.05, K=4, S=3, batch_size=2)
    x0 = np.ones(noisy_quadratic.dim)
    a, _ = run_rounds(cfg, noisy_quadratic, x0, 1, 0)
    b, _ = run_rounds(replace(cfg, algorithm="FedAvg"), noisy_quadratic, x0, 1, 0)
    assert np.max(np.abs(a.x - b.x)) <= 1e-12


def test_scaffold_single_client_is_sgd():
    client = _scalar(2.0, curvature=2.0)
    pop = QuadraticPopulation([client])
    cfg = AlgoConfig("Scaffold", SGD, eta=0.1, K=3, S=1)
    st = init_server_state(cfg, pop, np.array([0.0]))
    st, _ = scaffold_round(cfg, st, pop, RngStream(0))
    # c_i == c_server after the first refresh, so the next round is plain SGD
    x = st.x.copy()
    new, _ = scaffold_round(cfg, st, pop, RngStream(1))
    y = x.copy()
    for _ in range(3):
        y = y - 0.1 * client.grad(y)
    assert new.x == pytest.approx(y, abs=1e-12)


def test_loc_mime_sgd_equals_mime(noisy_quadratic):
    cfg = AlgoConfig("LocMime", SGD, eta=0.05, K=3, S=4, batch_size=2)
    x0 = np.ones(noisy_quadratic.dim)
    a, _ = run_rounds(cfg, noisy_quadratic, x0, 5, 0)
    b, _ = run_rounds(replace(cfg, algorithm="Mime"), noisy_quadratic, x0, 5, 0)
    assert np.array_equal(a.x, b.x)


def test_loc_mime_second_step_by_hand():
    # one scalar client f = 1/2 (y - 1)^2, full batch: Mime and LocMime differ in step 2 only
    # through the momentum each one uses
    client = _scalar(1.0)
    pop = QuadraticPopulation([client])
    beta, eta = 0.9, 0.1
    base = OptimizerSpec("SGDm", beta=beta)
    st = init_server_state(AlgoConfig("Mime", base), pop, np.array([0.0]))
    st = replace(st, s=type(st.s)(np.array([0.4])))
    cfg = AlgoConfig("LocMime", base, eta=eta, K=2, S=1)
    loc, _ = loc_mime_round(cfg, st, pop, RngStream(0))
    mime, _ = run_round(replace(cfg, algorithm="Mime"), st, pop, RngStream(0))
    c, m = -1.0, 0.4
    y1 = -eta * ((1 - beta) * c + beta * m)
    g2 = (y1 - 1) - (0 - 1) + c
    m_local = (1 - beta) * c + beta * m
    y2_mime = y1 - eta * ((1 - beta) * g2 + beta * m)
    y2_loc = y1 - eta * ((1 - beta) * g2 + beta * m_local)
    assert mime.x == pytest.approx([y2_mime], abs=1e-15)
    assert loc.x == pytest.approx([y2_loc], abs=1e-15)
    assert (loc.x - mime.x)[0] == pytest.approx(-eta * beta * (m_local - m), abs=1e-15)


def test_optimizer_state_untouched_during_round(noisy_quadratic):
    base = OptimizerSpec("Adam")
    cfg = AlgoConfig("Mime", base, eta=0.01, K=3, S=3, batch_size=2)
    d = noisy_quadratic.dim
    s = AdamState(np.full(d, 0.1), np.full(d, 2.0))
    st = ServerRoundState(np.zeros(d), s)
    digest = hashlib.sha256(s.m.tobytes() + s.v.tobytes()).hexdigest()
    new, rec = run_round(cfg, st, noisy_quadratic, RngStream(0), trace=True)
    assert hashlib.sha256(s.m.tobytes() + s.v.tobytes()).hexdigest() == digest
    assert rec.trace.s is s
    assert not np.array_equal(new.s.v, s.v)


def test_by_n_weighting_with_equal_n_matches_uniform(noisy_quadratic):
    cfg = AlgoConfig("Mime", SGDM, eta=0.05, K=2, S=4, batch_size=2)
    x0 = np.ones(noisy_quadratic.dim)
    a, _ = run_rounds(cfg, noisy_quadratic, x0, 5, 0)
    b, _ = run_rounds(replace(cfg, weighting="by_n"), noisy_quadratic, x0, 5, 0)
    assert np.array_equal(a.x, b.x)


@pytest.mark.parametrize("algorithm", ["Mime", "MimeLite", "MimeMVR", "MimeLiteMVR", "FedAvg", "Scaffold"])
def test_threads_do_not_change_results(noisy_quadratic, algorithm):
    cfg = AlgoConfig(algorithm, SGDM if "MVR" not in algorithm else SGD, eta=0.05, K=2, S=5, batch_size=2)
    x0 = np.ones(noisy_quadratic.dim)
    a, ra = run_rounds(cfg, noisy_quadratic, x0, 5, 3)
    b, rb = run_rounds(replace(cfg, workers=4), noisy_quadratic, x0, 5, 3)
    assert np.array_equal(a.x, b.x)
    assert [r.f_value for r in ra] == [r.f_value for r in rb]


def test_split_communication_groups(noisy_quadratic):
    cfg = AlgoConfig("Mime", SGD, eta=0.05, K=2, S=4, split_communication=True)
    _, rec = run_round(cfg, init_server_state(cfg, noisy_quadratic, np.zeros(noisy_quadratic.dim)),
                       noisy_quadratic, RngStream(0))
    assert rec.comm_up == 4 * noisy_quadratic.dim
    with pytest.raises(ContractViolation):
        AlgoConfig("FedAvg", split_communication=True)


def test_independent_control_variate_costs_extra(noisy_quadratic):
    d = noisy_quadratic.dim
    cfg = AlgoConfig("Mime", SGD, eta=0.05, K=2, S=3, control_variate_source="independent_sample")
    _, rec = run_round(cfg, init_server_state(cfg, noisy_quadratic, np.zeros(d)), noisy_quadratic, RngStream(0))
    assert rec.comm_up == 3 * 2 * d + 3 * d


def test_mvr_anchor_switch_changes_trajectory(noisy_quadratic):
    cfg = AlgoConfig("MimeMVR", SGD, eta=0.05, K=2, S=4, batch_size=2, a=0.3)
    x0 = np.ones(noisy_quadratic.dim)
    a, ra = run_rounds(cfg, noisy_quadratic, x0, 5, 0)
    b, _ = run_rounds(replace(cfg, mvr_anchor="prev"), noisy_quadratic, x0, 5, 0)
    assert not np.array_equal(a.x, b.x)
    assert all(r.momentum_err_sq >= 0 for r in ra)


@pytest.mark.parametrize("cfg, d, expected", [
    (AlgoConfig("Mime", SGD), 10, (20, 20)),
    (AlgoConfig("Mime", SGD, split_communication=True), 10, (20, 10)),
    (AlgoConfig("FedAvg", SGD), 10, (10, 10)),
    (AlgoConfig("MimeLite", OptimizerSpec("Adam")), 10, (30, 20)),
    (AlgoConfig("Mime", SGDM), 10, (30, 20)),
])
def test_comm_cost(cfg, d, expected):
    assert comm_cost(cfg, d) == expected


@pytest.mark.parametrize("kw", [{"eta": 0.0}, {"S": 0}, {"a": 1.5}, {"algorithm": "FedNova"}, {"mu_prox": -1.0},
                                {"batch_size": 0}, {"warmup_rounds": 0}])
def test_algo_config_validation(kw):
    with pytest.raises(ContractViolation):
        AlgoConfig(**kw)


def test_fedavg_drift_demo_fixed_point(two_client_drift):
    """Local GD from x contracts toward each client optimum by (1 - eta c)^K;
    the averaged round has the fixed point solving x = mean_i(z_i + r_i (x - z_i))."""
    K, eta = 200, 0.01
    r = np.array([(1 - eta * 3) ** K, (1 - eta * 1) ** K])
    z = np.array([1.0, -1.0])
    fixed = np.mean(z * (1 - r)) / (1 - np.mean(r))
    cfg = AlgoConfig("FedAvg", SGDM, eta=eta, K=K, S=2)
    st, _ = run_rounds(cfg, two_client_drift, np.array([0.0]), 300, 0)
    assert st.x[0] == pytest.approx(fixed, abs=1e-6)
    assert fixed == pytest.approx(0.0707, abs=1e-4)


def test_theory_schedule_caps():
    out = theory_schedule("Mime", L=4.0, delta=0.5, G2=1.0, F=10.0, S=5, K=5, T=10)
    assert out["eta"] * 5 <= 1 / (2 * 4.0) + 1e-15
    mvr = theory_schedule("MimeMVR", L=4.0, delta=0.5, G2=1.0, F=1.0, S=5, K=2, T=100)
    assert mvr["K"] >= 8 and 1 / 100 <= mvr["a"] <= 1.0
    assert mvr["eta"] <= 1 / (2 * 4.0)
    pl = theory_schedule("Mime", L=1.0, delta=0.1, G2=1.0, F=1.0, S=5, K=2, T=1000, mu=0.5)
    assert pl["eta"] == pytest.approx(1 / (0.5 * 2 * 1000))
