import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare, ks_2samp

from mfsampler.boltzmann import (
    BoltzmannConfig,
    ClockQueue,
    CollisionKernel,
    PhaseEnsemble,
    bird_event,
    collide_velocities,
    initial_phase,
    nanbu_event,
    run_boltzmann,
    sample_direction,
    total_cross_section,
    verlet_advance,
)
from mfsampler.core_model import get_potential
from mfsampler.errors import InvalidArgument, InvalidConfiguration

QUAD = get_potential("quadratic_1d")
ZERO = get_potential("zero_1d")


def _rng(seed=0):
    return np.random.default_rng(seed)


# -- kernel ------------------------------------------------------------------


def test_kernel_bounds():
    assert CollisionKernel(1.0, 1).lambda_bound == pytest.approx(2 / math.sqrt(math.pi))
    assert CollisionKernel(1.0, 1).lambda_bound == pytest.approx(1.12838, abs=1e-5)
    assert CollisionKernel(0.5, 1).lambda_bound == pytest.approx(2 / (0.5 * math.sqrt(math.pi)))
    assert CollisionKernel(4.0, 2).lambda_bound == pytest.approx(2 / 16)


def test_total_cross_section_examples():
    k = CollisionKernel(1.0, 1)
    at_zero = total_cross_section(k, [0.0], [3.0], [0.0], [-1.0])
    assert at_zero == pytest.approx(2 / math.sqrt(math.pi))
    assert total_cross_section(k, [0.0], [0.0], [1.0], [0.0]) == pytest.approx(at_zero / math.e)
    assert total_cross_section(k, [0.0], [0.0], [1e3], [0.0]) == 0.0


def test_lambda_below_supremum_warns(caplog):
    with caplog.at_level("WARNING"):
        CollisionKernel(1.0, 2, lambda_bound=2 / math.pi)
    assert "below the cross-section supremum" in caplog.text


# -- transport ---------------------------------------------------------------


def test_verlet_free_streaming():
    ph = PhaseEnsemble(np.array([[0.5], [-1.0]]), np.array([[2.0], [0.25]]))
    verlet_advance(ph, ZERO, 1.234, 0.1)
    assert np.allclose(ph.x[:, 0], [0.5 + 2 * 1.234, -1.0 + 0.25 * 1.234], atol=1e-13)
    assert ph.t == 1.234


def test_verlet_hand_step():
    ph = PhaseEnsemble(np.array([[1.0]]), np.array([[0.0]]))
    verlet_advance(ph, QUAD, 0.1, 0.1)
    assert ph.x[0, 0] == pytest.approx(0.995, abs=1e-15)
    assert ph.v[0, 0] == pytest.approx(-0.09975, abs=1e-15)


def test_verlet_harmonic_energy_drift():
    ph = PhaseEnsemble(np.array([[1.0]]), np.array([[0.5]]))
    e0 = ph.total_energy(QUAD)
    verlet_advance(ph, QUAD, 100.0, 0.01)
    assert abs(ph.total_energy(QUAD) - e0) < 1e-3


def test_verlet_rejects_backwards():
    ph = PhaseEnsemble(np.zeros((1, 1)), np.zeros((1, 1)), t=1.0)
    with pytest.raises(InvalidArgument):
        verlet_advance(ph, QUAD, 0.5, 0.1)


# -- collision kinematics ----------------------------------------------------


def test_collide_examples():
    vs, ws = collide_velocities([1.0, 0.0], [0.0, 1.0], [1.0, 0.0])
    assert np.allclose(vs, [0, 0]) and np.allclose(ws, [1, 1])
    vs, ws = collide_velocities([2.0], [-3.0], [1.0])
    assert vs[0] == -3.0 and ws[0] == 2.0
    vs, ws = collide_velocities([0.3, 0.4], [0.3, 0.4], [0.6, 0.8])
    assert np.array_equal(vs, [0.3, 0.4]) and np.array_equal(ws, [0.3, 0.4])
    with pytest.raises(InvalidArgument):
        collide_velocities([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])


finite = st.floats(-1e3, 1e3)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2),
       st.floats(0, 2 * math.pi))
def test_collide_invariants(v, w, theta):
    v, w = np.array(v), np.array(w)
    n = np.array([math.cos(theta), math.sin(theta)])
    vs, ws = collide_velocities(v, w, n)
    scale = 1 + v @ v + w @ w
    assert np.allclose(vs + ws, v + w, atol=1e-12 * math.sqrt(scale))
    assert abs(vs @ vs + ws @ ws - (v @ v + w @ w)) <= 1e-12 * scale
    assert abs(np.linalg.norm(vs - ws) - np.linalg.norm(v - w)) <= 1e-12 * math.sqrt(scale)


# -- collision events --------------------------------------------------------


def test_nanbu_coincident_always_accepts():
    ph = PhaseEnsemble(np.zeros((5, 1)), _rng(1).standard_normal((5, 1)))
    k = CollisionKernel(1.0, 1)
    rng = _rng(2)
    assert all(nanbu_event(ph, k, 0, rng) is not None for _ in range(50))


def test_nanbu_single_particle_self_collision():
    ph = PhaseEnsemble(np.zeros((1, 2)), np.array([[0.3, -1.2]]))
    before = ph.v.copy()
    assert nanbu_event(ph, CollisionKernel(1.0, 2), 0, _rng(3)) == 0
    assert np.array_equal(ph.v, before)


def test_nanbu_far_pair_acceptance_is_self_term_only():
    # the cross term vanishes, so the mean cross-section is Λ/N from j = i_c alone
    ph = PhaseEnsemble(np.array([[0.0], [100.0]]), np.array([[1.0], [-1.0]]))
    k = CollisionKernel(1.0, 1)
    rng = _rng(4)
    n = 4000
    accepted = sum(nanbu_event(ph.copy(), k, 0, rng) is not None for _ in range(n))
    assert abs(accepted / n - 0.5) < 4 * math.sqrt(0.25 / n)
    proportional = [nanbu_event(ph, k, 0, rng, partner="proportional") for _ in range(200)]
    assert set(proportional) <= {None, 0}
    assert ph.v[0, 0] == 1.0 and ph.v[1, 0] == -1.0


def test_nanbu_updates_only_the_ringing_particle():
    ph = PhaseEnsemble(np.zeros((2, 1)), np.array([[1.0], [-1.0]]))
    k = CollisionKernel(1.0, 1, kind="constant")
    rng = _rng(5)
    for _ in range(20):
        j = nanbu_event(ph, k, 0, rng)
        assert ph.v[1, 0] == -1.0
        if j == 1:
            break
    assert ph.v[0, 0] == -1.0


def test_nanbu_proportional_partner_prefers_near():
    x = np.array([[0.0], [0.0], [50.0]])
    ph = PhaseEnsemble(x, np.zeros((3, 1)))
    k = CollisionKernel(1.0, 1)
    rng = _rng(6)
    partners = [nanbu_event(ph, k, 0, rng, partner="proportional") for _ in range(300)]
    assert 2 not in partners


def test_bird_coincident_pair_swaps_in_1d():
    ph = PhaseEnsemble(np.zeros((2, 1)), np.array([[1.5], [-0.5]]))
    assert bird_event(ph, CollisionKernel(1.0, 1), (0, 1), _rng(7))
    assert ph.v[0, 0] == -0.5 and ph.v[1, 0] == 1.5


def test_bird_conserves_energy_exactly():
    rng = _rng(8)
    ph = PhaseEnsemble(0.1 * rng.standard_normal((30, 2)), rng.standard_normal((30, 2)))
    k = CollisionKernel(1.0, 2)
    pot = get_potential("quadratic_2d")
    e0 = ph.total_energy(pot)
    p0 = ph.v.sum(axis=0)
    for _ in range(500):
        i, j = rng.choice(30, 2, replace=False)
        bird_event(ph, k, (int(i), int(j)), rng)
    assert abs(ph.total_energy(pot) - e0) < 1e-12 * abs(e0)
    assert np.allclose(ph.v.sum(axis=0), p0, atol=1e-12)


def test_bird_rejects_self_pair():
    ph = PhaseEnsemble(np.zeros((2, 1)), np.zeros((2, 1)))
    with pytest.raises(InvalidArgument):
        bird_event(ph, CollisionKernel(1.0, 1), (1, 1), _rng())


def test_sample_direction_uniform_on_circle():
    rng = _rng(9)
    n = np.array([sample_direction(2, rng) for _ in range(20000)])
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    theta = np.arctan2(n[:, 1], n[:, 0])
    counts, _ = np.histogram(theta, bins=24, range=(-math.pi, math.pi))
    assert chisquare(counts).pvalue > 0.001
    ones = np.array([sample_direction(1, rng)[0] for _ in range(20000)])
    assert set(np.unique(ones)) == {-1.0, 1.0}
    assert chisquare(np.unique(ones, return_counts=True)[1]).pvalue > 0.001


def test_collision_axis_uniform_with_constant_kernel():
    # v = 0, w = e1: v* = n1 n, so the axis of v* is the axis of n
    rng = _rng(10)
    k = CollisionKernel(1.0, 2, kind="constant")
    angles = []
    while len(angles) < 20000:
        ph = PhaseEnsemble(np.zeros((2, 2)), np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert bird_event(ph, k, (0, 1), rng)
        vs = ph.v[0]
        if vs @ vs > 1e-20:
            angles.append(math.atan2(vs[1], vs[0]) % math.pi)
    # v* = cos θ (cos θ, sin θ); the axis angle θ mod π is uniform
    counts, _ = np.histogram(angles, bins=18, range=(0, math.pi))
    assert chisquare(counts).pvalue > 0.001


# -- clock queue -------------------------------------------------------------


def test_clock_queue_order_and_truncation():
    q = ClockQueue(horizon=5.0)
    q.push(2.0, (3, 1))
    q.push(1.0, (2, 0))
    q.push(2.0, (1, 4))
    q.push(2.0, (1, 2))
    q.push(7.0, (0, 1))
    assert len(q) == 4
    assert [q.pop() for _ in range(4)] == [(1.0, (2, 0)), (2.0, (1, 2)), (2.0, (1, 4)),
                                           (2.0, (3, 1))]
    assert q.peek() == (math.inf, None)


# -- full runs ---------------------------------------------------------------


def _cfg(**kw):
    base = dict(method="nanbu", potential="quadratic_1d", n_particles=50, horizon=1.0,
                n_snapshots=10)
    base.update(kw)
    return BoltzmannConfig(**base)


@pytest.mark.parametrize("method", ["nanbu", "bird"])
def test_zero_horizon_returns_initial(method):
    res = run_boltzmann(_cfg(method=method, horizon=0.0))
    init = initial_phase(res.config)
    assert np.array_equal(res.final.x, init.x) and np.array_equal(res.final.v, init.v)
    assert np.array_equal(res.snapshots[-1].x, init.x)
    assert res.n_rings == 0


@pytest.mark.parametrize("method", ["nanbu", "bird"])
def test_run_is_deterministic(method):
    a = run_boltzmann(_cfg(method=method, seed=3))
    b = run_boltzmann(_cfg(method=method, seed=3))
    assert np.array_equal(a.final.x, b.final.x) and np.array_equal(a.final.v, b.final.v)
    assert a.n_rings == b.n_rings


@pytest.mark.parametrize("method", ["nanbu", "bird"])
def test_kernel_off_replays_pure_verlet(method):
    cfg = _cfg(method=method, kernel_kind="off", record_events=True, horizon=2.0, seed=4)
    res = run_boltzmann(cfg)
    assert res.n_accepted == 0 and res.n_rings > 0
    # the same sequence of checkpoints through a standalone integrator
    ph = initial_phase(cfg)
    stops = sorted(set(cfg.observation_times().tolist()) | {e[0] for e in res.events})
    for t in stops:
        verlet_advance(ph, cfg.potential, t, cfg.verlet_dt)
    assert np.array_equal(ph.x, res.final.x) and np.array_equal(ph.v, res.final.v)
    e = res.energies()
    assert np.max(np.abs(e - e[0])) / e[0] < 1e-3


@pytest.mark.parametrize("method,rate", [("nanbu", lambda n, lam: n * lam),
                                         ("bird", lambda n, lam: (n - 1) * lam)])
def test_ring_count_is_poisson(method, rate):
    cfg = _cfg(method=method, n_particles=100, horizon=5.0, kernel_kind="off", seed=5)
    res = run_boltzmann(cfg)
    mean = rate(100, res.lambda_bound) * 5.0
    assert abs(res.n_rings - mean) < 5 * math.sqrt(mean)


def test_bird_schedulers_equivalent_counts():
    pairs, sup = [], []
    for seed in range(300):
        base = dict(method="bird", n_particles=8, horizon=1.0, kernel_kind="off", seed=seed,
                    n_snapshots=1)
        pairs.append(run_boltzmann(_cfg(**base, bird_scheduler="pairs")).n_rings)
        sup.append(run_boltzmann(_cfg(**base, bird_scheduler="superposition")).n_rings)
    assert ks_2samp(pairs, sup).pvalue > 0.001
    mean = 7 * CollisionKernel(1.0, 1).lambda_bound
    assert abs(np.mean(sup) - mean) < 4 * math.sqrt(mean / 300)
    assert abs(np.mean(pairs) - mean) < 4 * math.sqrt(mean / 300)


def test_bird_run_conserves_energy():
    res = run_boltzmann(_cfg(method="bird", n_particles=100, horizon=2.0, seed=6))
    e = res.energies()
    assert res.n_accepted > 0
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-3


def test_event_log_is_time_ordered():
    res = run_boltzmann(_cfg(method="bird", record_events=True, seed=7))
    times = [e[0] for e in res.events]
    assert times == sorted(times) and len(times) == res.n_rings
    assert all(0 <= t <= 1.0 for t in times)


def test_config_validation():
    with pytest.raises(InvalidConfiguration):
        _cfg(method="dsmc")
    with pytest.raises(InvalidConfiguration):
        _cfg(method="bird", n_particles=1)
    with pytest.raises(InvalidConfiguration):
        _cfg(max_events=10)
    with pytest.raises(InvalidConfiguration, match="energy condition"):
        run_boltzmann(_cfg(potential="doublewell_1d", box_half_width=2.0))


def test_equilibrium_initialisation():
    cfg = _cfg(init="equilibrium", n_particles=2000, horizon=0.0)
    ph = initial_phase(cfg)
    assert abs(ph.x.var() - 1) < 0.15 and abs(ph.v.var() - 1) < 0.15
