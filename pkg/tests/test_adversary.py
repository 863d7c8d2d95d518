import numpy as np
import pytest

from secure_hfl.adversary import AttackKind, AttackPolicy, assign_roles, attack_active, poison
from secure_hfl.config import ExperimentConfig
from secure_hfl.errors import ConfigurationError
from secure_hfl.harness import Simulation
from secure_hfl.model import UpdateVector, cosine_similarity


def test_roles_counts_and_disjoint():
    roles = assign_roles(range(25), 0.2, 0.12, 0.2, seed=0)
    assert len(roles.attackers) == 5
    assert len(roles.unreliable) == 3
    assert not roles.attackers & roles.unreliable
    assert all(roles.drop_prob_of(v) == 0.2 for v in roles.unreliable)
    assert all(roles.drop_prob_of(v) == 0.0 for v in roles.attackers)


def test_roles_zero_fraction_and_determinism():
    assert assign_roles(range(25), 0.0, 0.0, 0.1, seed=3).attackers == frozenset()
    a = assign_roles(range(25), 0.2, 0.1, 0.1, seed=3)
    b = assign_roles(range(25), 0.2, 0.1, 0.1, seed=3)
    assert a == b
    assert a.as_dict()["attackers"] == sorted(a.attackers)


def test_roles_validation():
    with pytest.raises(ConfigurationError):
        assign_roles(range(10), 0.7, 0.5, 0.1, seed=0)
    with pytest.raises(ConfigurationError):
        assign_roles(range(10), 1.2, 0.0, 0.1, seed=0)
    with pytest.raises(ConfigurationError):
        assign_roles(range(10), 0.2, 0.2, 1.0, seed=0)
    roles = assign_roles(range(10), 0.7, 0.5, 0.1, seed=0, overlap=True)
    assert len(roles.attackers) == 7 and len(roles.unreliable) == 5


def test_attack_schedules():
    single = AttackPolicy(AttackKind.SINGLE_ROUND, 10)
    assert attack_active(single, 10) and not attack_active(single, 11) and not attack_active(single, 9)
    cont = AttackPolicy(AttackKind.CONTINUOUS, 10)
    assert not attack_active(cont, 9)
    assert attack_active(cont, 10) and attack_active(cont, 500)
    assert not attack_active(None, 10)


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        AttackPolicy(noise_var=-0.1)
    with pytest.raises(ConfigurationError):
        AttackPolicy(start_round=0)


def test_poison_zero_noise_is_identity():
    v = UpdateVector(np.arange(5.0), round=3)
    out = poison(v, AttackPolicy(noise_mean=0.0, noise_var=0.0), np.random.default_rng(0))
    assert np.array_equal(out.values, v.values) and out.round == 3


def test_poison_moments_use_variance():
    v = np.zeros(10**5)
    out = poison(v, AttackPolicy(noise_mean=2.0, noise_var=0.3), np.random.default_rng(1))
    assert abs(out.mean() - 2.0) <= 0.02
    assert abs(out.var() - 0.3) <= 0.02


def test_poison_leaves_input_untouched():
    v = UpdateVector(np.ones(4))
    before = v.values.copy()
    out = poison(v, AttackPolicy(noise_mean=1.0, noise_var=0.5), np.random.default_rng(2))
    assert np.array_equal(v.values, before)
    assert out is not v and not np.shares_memory(out.values, v.values)


def _converged_updates():
    """A benign vehicle's consecutive local updates late in a fixture run."""
    cfg = ExperimentConfig()
    cfg.attack.enabled = False
    sim = Simulation(cfg)
    sim.run(30)
    vid = 0
    prev = sim._train(vid, 30)[1]
    sim.held[vid] = sim.global_model
    cur = sim._train(vid, 31)[1]
    return prev, cur


def test_poisoned_update_dissimilar_to_clean_previous():
    prev, cur = _converged_updates()
    policy = AttackPolicy(noise_mean=2.0, noise_var=0.3)
    below = 0
    for seed in range(1000):
        noisy = poison(cur, policy, np.random.default_rng(seed))
        below += cosine_similarity(noisy, prev) < 0.5
    assert below / 1000 >= 0.99
    # the clean update itself passes
    assert cosine_similarity(cur, prev) >= 0.5
