"""
Tests for the chain models, seeding and simulation
"""
import math

import numpy as np
import pytest

from src.core.chain import (ChainSpec, FiniteChain, IncrementLaw, derive_seed, first_passage,
                            lattice_span, make_queue_increments, map_replications,
                            mean_first_passage, occupation_frequencies, reflect_step, simulate_path)
from src.core.errors import HorizonExceeded, ModelError, NonLatticeIncrements

from conftest import MM1_HALF_ALPHA


@pytest.mark.parametrize('x, d, expected', [(5, -12, 0), (0, 9, 9), (3, -3, 0)])
def test_reflect_step(x, d, expected):
    assert reflect_step(x, d) == expected


def test_queue_increments_atoms(queue_law):
    atoms = dict(queue_law.atoms)
    assert queue_law.lattice_step == pytest.approx(3.0)
    assert set(atoms) == {-12.0, -3.0, 0.0, 9.0}
    assert atoms[0.0] == pytest.approx(4 / 9)
    assert atoms[9.0] == pytest.approx(2 / 9)
    assert atoms[-12.0] == pytest.approx(2 / 9)
    assert atoms[-3.0] == pytest.approx(1 / 9)


def test_queue_increments_moments(queue_law):
    assert queue_law.delta == pytest.approx(1.0)
    assert queue_law.variance == pytest.approx(50.0)
    assert make_queue_increments(4.0, 3.0, 1.0).variance == pytest.approx(25.0)
    assert make_queue_increments(4.0, 3.0, 5.0).variance == pytest.approx(125.0)


def test_queue_increments_preconditions():
    with pytest.raises(ModelError):
        make_queue_increments(3.0, 4.0, 2.0)
    with pytest.raises(ModelError):
        make_queue_increments(4.0, 3.0, 0.0)


def test_increment_law_invariants():
    with pytest.raises(ModelError):
        IncrementLaw.from_atoms([(1.0, 0.5), (-1.0, 0.4)])
    with pytest.raises(ModelError):
        IncrementLaw.from_atoms([(-1.0, 0.5), (-2.0, 0.5)])
    with pytest.raises(ModelError):
        IncrementLaw.from_atoms([(1.0, 0.5), (-1.0, 0.5)])
    with pytest.raises(NonLatticeIncrements):
        IncrementLaw.from_atoms([(math.sqrt(2.0), 0.3), (-1.0, 0.7)])
    with pytest.raises(NonLatticeIncrements):
        IncrementLaw(((1.5, 0.3), (-1.0, 0.7)), 1.0)


def test_lattice_span():
    assert lattice_span([9.0, -12.0, -3.0]) == pytest.approx(3.0)
    assert lattice_span([0.5, 1.25]) == pytest.approx(0.25)
    assert lattice_span([0.0, 0.0]) is None
    assert lattice_span([1.0, math.pi]) is None


def test_mm1_is_reflected_walk():
    spec = ChainSpec.mm1(0.25)
    assert spec.law.atoms == ((1.0, 0.25), (-1.0, 0.75))
    assert spec.lattice_step == 1.0
    assert spec.rho == pytest.approx(1.0 / 3.0)
    with pytest.raises(ModelError):
        ChainSpec.mm1(0.5)


def test_derive_seed_depends_on_pair_only():
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(7, 3) != derive_seed(7, 4)
    assert derive_seed(7, 3) != derive_seed(8, 3)
    assert 0 <= derive_seed(2 ** 64 - 1, 2 ** 40) < 2 ** 64


def test_simulate_path_is_deterministic(queue_walk):
    first = simulate_path(queue_walk, 500, 11, 2)
    second = simulate_path(queue_walk, 500, 11, 2)
    other = simulate_path(queue_walk, 500, 11, 3)
    assert np.array_equal(first.states, second.states)
    assert first.seed == second.seed
    assert not np.array_equal(first.states, other.states)


def test_path_transitions_follow_the_law(queue_walk):
    path = simulate_path(queue_walk.with_x0(30.0), 2000, 5)
    assert path.states[0] == 10
    assert path.horizon == 2000
    units = set(queue_walk.law.units.tolist())
    for current, following in zip(path.states[:-1], path.states[1:]):
        assert any(following == max(current + unit, 0) for unit in units)


def test_simulate_path_one_step(mm1_half):
    path = simulate_path(mm1_half, 1, 3)
    assert path.states[0] == 0
    assert path.states[1] in (0, 1)
    with pytest.raises(ValueError):
        simulate_path(mm1_half, 0, 3)


def test_finite_chain_simulation(toy_chain):
    path = simulate_path(toy_chain, 20_000, 9)
    assert set(np.unique(path.states).tolist()) <= {0, 1}
    assert np.mean(path.states[1:]) == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / 20_000))


def test_finite_chain_validation():
    with pytest.raises(ModelError):
        FiniteChain(np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(ModelError):
        FiniteChain(np.array([[1.0]]), x0=2.0)


def test_mm1_up_move_frequency(mm1_half):
    n = 10 ** 6
    path = simulate_path(mm1_half, n, 2024)
    ups = np.count_nonzero(np.diff(path.states) == 1)
    stderr = math.sqrt(MM1_HALF_ALPHA * (1 - MM1_HALF_ALPHA) / n)
    assert abs(ups / n - MM1_HALF_ALPHA) < 4 * stderr


def test_mm1_occupation_is_geometric(mm1_half):
    path = simulate_path(mm1_half, 10 ** 6, 77)
    frequencies = occupation_frequencies(path, 6)
    expected = 0.5 * 0.5 ** np.arange(6)
    assert np.max(np.abs(frequencies - expected)) < 0.01


def test_first_passage_immediate_return():
    spec = ChainSpec.mm1(0.2)
    for index in range(50):
        result = first_passage(spec, 0.0, 1, index)
        if result.tau0 == 1:
            assert result.area == 0.0
            break
    else:
        pytest.fail("No immediate return in 50 replications")


def test_first_passage_cap():
    with pytest.raises(HorizonExceeded):
        first_passage(ChainSpec.mm1(MM1_HALF_ALPHA), 500.0, 1, 0, max_steps=100)


@pytest.mark.parametrize('r', [100, 200])
def test_fluid_limits_of_first_passage(mm1_half, r):
    delta = mm1_half.delta
    mean_tau, mean_area = mean_first_passage(mm1_half, float(r), 2000, master_seed=3)
    assert mean_tau == pytest.approx(r / delta, rel=0.1)
    assert mean_area == pytest.approx(r * r / (2 * delta), rel=0.1)


def test_map_replications_order_is_thread_independent():
    single = map_replications(lambda index: derive_seed(5, index), 64, threads=1)
    pooled = map_replications(lambda index: derive_seed(5, index), 64, threads=4)
    assert single == pooled
