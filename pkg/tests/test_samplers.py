import collections
import math

import numpy as np
import pytest

from bayestree import model, samplers
from bayestree.core import DegenerateDatasetError, Dataset, Hyperparams, Tree, tree_from_key
from bayestree.moves import MoveKind, Proposal, transition_log_prob
from bayestree.samplers import (ChainState, CollapsedParticlesError, ParticleSet,
                                acceptance_log_ratio, mcmc_step, multinomial_resample,
                                normalize_weights, run_mcmc, run_sumd, sumd_schedule)

from conftest import reachable_space, toy_dataset


def enumerated_posterior(data, hp, keys):
    lj = np.array([model.log_joint(model.fit_leaves(tree_from_key(k), data, hp.leaf_smoothing),
                                   data, hp) for k in keys])
    p = np.exp(lj - lj.max())
    return p / p.sum()


def occupancy(sample, keys):
    c = collections.Counter(t.key() for t in sample.trees)
    return np.array([c[k] for k in keys]) / len(sample)


def test_grow_ratio_by_hand(six_rows, stump, two_level):
    hp = Hyperparams(a=1.0, beta=1.0)
    # stump leaves: {0,1,2} -> (4/5, 1/5), {3,4,5} -> (1/5, 4/5)
    lj_stump = 6 * math.log(4 / 5) + math.log(1 / 2) + math.log(1 / 5) - math.log(2)
    lj_two = (3 * math.log(4 / 5) + 2 * math.log(3 / 4) + math.log(2 / 3)
              + 2 * math.log(1 / 2) + math.log(1 / 5) - math.log(3))
    fitted, joint = model.evaluate(stump, six_rows, hp)
    assert joint == pytest.approx(lj_stump, abs=1e-12)
    # forward: Grow (1/3) * leaf (1/2) * feature (1/2) * threshold (1/1)
    # reverse: Prune (1/4, swap is valid in the deeper tree) * node (1/1)
    prop = Proposal(MoveKind.GROW, two_level, math.log(1 / 12), math.log(1 / 4), (3,))
    assert prop.log_q_fwd == pytest.approx(transition_log_prob(stump, two_level, six_rows), abs=1e-15)
    assert prop.log_q_rev == pytest.approx(transition_log_prob(two_level, stump, six_rows), abs=1e-15)
    got = acceptance_log_ratio(ChainState(fitted, joint), prop, six_rows, hp)
    assert got == pytest.approx(lj_two - lj_stump + math.log(3), abs=1e-12)


def test_ratio_independent_of_a(six_rows, stump, two_level):
    prop = Proposal(MoveKind.GROW, two_level, math.log(1 / 12), math.log(1 / 4))
    ratios = []
    for a in (1.0, 7.0):
        hp = Hyperparams(a=a)
        fitted, joint = model.evaluate(stump, six_rows, hp)
        ratios.append(acceptance_log_ratio(ChainState(fitted, joint), prop, six_rows, hp))
    assert ratios[0] == pytest.approx(ratios[1], abs=1e-12)


@pytest.mark.parametrize("log_alpha, accepted", [(math.inf, True), (-math.inf, False), (0.0, True)])
def test_extreme_ratios(monkeypatch, six_rows, stump, log_alpha, accepted):
    hp = Hyperparams()
    fitted, joint = model.evaluate(stump, six_rows, hp)
    marker = Tree()
    monkeypatch.setattr(samplers, "_score", lambda cur, prop, ev: (log_alpha, marker, -1.0))
    rng = np.random.default_rng(0)
    for _ in range(20):
        state = mcmc_step(ChainState(fitted, joint), six_rows, hp, rng)
        assert (state.current is marker) == accepted
        assert state.iteration == 1


def test_mcmc_two_tree_space():
    data = toy_dataset(n_values=2, seed=2)
    hp = Hyperparams(iterations=20_000, burn_in=500, max_depth=1, seed=1)
    keys = reachable_space(data, 1)
    assert len(keys) == 2
    post = enumerated_posterior(data, hp, keys)
    occ = occupancy(run_mcmc(data, hp), keys)
    np.testing.assert_allclose(occ, post, atol=0.03)


def test_mcmc_counts():
    data = toy_dataset()
    s = run_mcmc(data, Hyperparams(iterations=10, burn_in=4))
    assert len(s) == 6
    assert s.iterations == [4, 5, 6, 7, 8, 9]
    assert s.steps == 10 and 0 <= s.accepted <= 10


def test_mcmc_log_joints_are_consistent():
    data = toy_dataset(n_features=2, n_values=4)
    hp = Hyperparams(iterations=300, burn_in=0, seed=4)
    s = run_mcmc(data, hp)
    for t, lj in zip(s.trees[::25], s.log_joints[::25]):
        assert lj == pytest.approx(model.log_joint(t, data, hp), abs=1e-12)


def test_dp_single_shard_is_bitwise():
    data = toy_dataset(n_features=2, n_values=4, n_rows=60)
    hp = Hyperparams(iterations=400, burn_in=100, seed=9, workers=1)
    a = run_mcmc(data, hp)
    b = run_mcmc(data, hp, "partitioned")
    assert b.method == "dp"
    assert [t.key() for t in a.trees] == [t.key() for t in b.trees]
    assert a.log_joints == b.log_joints


def test_dp_many_shards_same_chain():
    data = toy_dataset(n_features=2, n_values=4, n_rows=60)
    seq = run_mcmc(data, Hyperparams(iterations=300, burn_in=0, seed=2))
    dp = run_mcmc(data, Hyperparams(iterations=300, burn_in=0, seed=2, workers=4), "partitioned",
                  pool_workers=1)
    assert [t.key() for t in seq.trees] == [t.key() for t in dp.trees]
    np.testing.assert_allclose(dp.log_joints, seq.log_joints, atol=1e-10)


def test_mcmc_determinism_and_seed_sensitivity():
    data = toy_dataset(n_features=2)
    hp = Hyperparams(iterations=200, burn_in=0, seed=5)
    a, b = run_mcmc(data, hp), run_mcmc(data, hp)
    assert [t.key() for t in a.trees] == [t.key() for t in b.trees]
    c = run_mcmc(data, Hyperparams(iterations=200, burn_in=0, seed=6))
    assert [t.key() for t in a.trees] != [t.key() for t in c.trees]


def test_degenerate_data_is_rejected():
    d = Dataset(np.ones((4, 1)), [0, 1, 0, 1])
    with pytest.raises(DegenerateDatasetError):
        run_mcmc(d, Hyperparams(iterations=10, burn_in=0))
    with pytest.raises(DegenerateDatasetError):
        run_sumd(d, Hyperparams(iterations=10, burn_in=0, workers=2))


def test_depth_penalty_shrinks_trees():
    data = toy_dataset(n_features=2, n_values=4, n_rows=40, noise=0.4)
    means = {}
    for beta in (0.0, 10.0):
        depths = [np.mean([t.depth for t in run_mcmc(
            data, Hyperparams(iterations=400, burn_in=200, beta=beta, seed=s)).trees])
            for s in range(20)]
        means[beta] = np.mean(depths)
    assert means[10.0] < means[0.0]


def test_normalize_weights():
    np.testing.assert_allclose(np.exp(normalize_weights([0.0, 0.0])), [0.5, 0.5])
    np.testing.assert_allclose(np.exp(normalize_weights([-1000.0, -1000.0 + math.log(3)])),
                               [0.25, 0.75])
    np.testing.assert_allclose(np.exp(normalize_weights([-math.inf, 2.0])), [0.0, 1.0])
    with pytest.raises(CollapsedParticlesError):
        normalize_weights([-math.inf, -math.inf])
    with pytest.raises(ValueError):
        normalize_weights([math.nan, 0.0])


def test_resample_requires_normalized():
    ps = ParticleSet(["a", "b"], np.zeros(2), normalized=False)
    with pytest.raises(ValueError):
        multinomial_resample(ps, np.random.default_rng(0))


def test_resample_degenerate_weight():
    w = normalize_weights([-math.inf, 0.0, -math.inf])
    out = multinomial_resample(ParticleSet(["a", "b", "c"], w, True), np.random.default_rng(0))
    assert out.particles == ["b", "b", "b"]
    np.testing.assert_allclose(np.exp(out.log_weights), [1 / 3] * 3)


def test_resample_offspring_means():
    w = np.array([0.5, 0.25, 0.125, 0.125])
    ps = ParticleSet([0, 1, 2, 3], np.log(w), True)
    rng = np.random.default_rng(11)
    n, c = 20_000, len(w)
    counts = np.zeros(c)
    for _ in range(n):
        counts += np.bincount(multinomial_resample(ps, rng).particles, minlength=c)
    sigma = np.sqrt(c * w * (1 - w) / n)
    assert np.all(np.abs(counts / n - c * w) < 3 * sigma)


def test_sumd_schedule():
    assert sumd_schedule(Hyperparams(iterations=8000, workers=40)) == (200, 100)
    assert sumd_schedule(Hyperparams(iterations=8000, workers=40, sumd_burn_in=0)) == (200, 0)
    assert sumd_schedule(Hyperparams(iterations=10, burn_in=0, workers=3)) == (3, 1)


def test_sumd_accounting():
    data = toy_dataset()
    s = run_sumd(data, Hyperparams(iterations=8000, workers=40, max_depth=2), pool_workers=1)
    assert s.steps == 200
    assert len(s) == 4000
    assert set(s.iterations) == set(range(100, 200))


def test_sumd_too_few_iterations():
    with pytest.raises(ValueError):
        run_sumd(toy_dataset(), Hyperparams(iterations=3, burn_in=0, workers=4))


def test_sumd_determinism_across_pool_sizes():
    data = toy_dataset(n_features=2)
    hp = Hyperparams(iterations=96, burn_in=0, workers=8, seed=3)
    a = run_sumd(data, hp, pool_workers=1)
    b = run_sumd(data, hp, pool_workers=1)
    c = run_sumd(data, hp, pool_workers=2)
    keys = [t.key() for t in a.trees]
    assert keys == [t.key() for t in b.trees] == [t.key() for t in c.trees]
    assert a.log_joints == c.log_joints


def test_sumd_large_population_tracks_posterior():
    data = toy_dataset(n_values=2, seed=2)
    hp = Hyperparams(iterations=256 * 60, workers=256, max_depth=1, seed=1, sumd_burn_in=10)
    keys = reachable_space(data, 1)
    post = enumerated_posterior(data, hp, keys)
    np.testing.assert_allclose(occupancy(run_sumd(data, hp, pool_workers=1), keys), post, atol=0.03)


def test_run_dispatch():
    data = toy_dataset()
    hp = Hyperparams(iterations=20, burn_in=10, workers=2)
    assert samplers.run(data, hp, "mcmc").method == "mcmc"
    assert samplers.run(data, hp, "dp", pool_workers=1).method == "dp"
    assert samplers.run(data, hp, "sumd", pool_workers=1).method == "sumd"
    with pytest.raises(ValueError):
        samplers.run(data, hp, "gibbs")
