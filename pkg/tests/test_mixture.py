import numpy as np
import pytest

from mola_kit.laplace import fit, mc_predict, output_gaussian, probit_predict
from mola_kit.linalg import DimensionMismatch
from mola_kit.mixture import (
    MixtureWeights,
    assemble,
    de_predict,
    map_predict,
    mola_predict,
    weights_evidence,
    weights_uniform,
)
from mola_kit.nn import Dataset, MlpConfig

from test_laplace import head_only_net, random_head_case


def component(rng, c=3, p=3, n=6, structure="kfac", lam=1.0):
    net, data = random_head_case(rng, c=c, p=p, n=n)
    return fit(net, data, structure=structure, prior_precision=lam)


def with_evidence(comp, value):
    from dataclasses import replace

    return replace(comp, log_marglik=value)


# ---------------------------------------------------------------- weights


def test_uniform_weights():
    np.testing.assert_array_equal(weights_uniform(1).values, [1.0])
    np.testing.assert_array_equal(weights_uniform(4).values, [0.25] * 4)
    import math

    w = weights_uniform(3)
    assert abs(math.fsum(w.values.tolist()) - 1.0) <= 1e-16


def test_weights_validation():
    with pytest.raises(ValueError):
        MixtureWeights(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        MixtureWeights(np.array([-0.1, 1.1]))
    with pytest.raises(ValueError):
        weights_uniform(0)


def test_evidence_weights_equal_evidences_uniform():
    rng = np.random.default_rng(0)
    comps = [with_evidence(component(rng), -10.0) for _ in range(3)]
    np.testing.assert_allclose(weights_evidence(comps).values, np.full(3, 1 / 3), atol=1e-15)


def test_evidence_weights_hand_case():
    rng = np.random.default_rng(1)
    comps = [
        with_evidence(component(rng), 0.0),
        with_evidence(component(rng), -np.log(3.0)),
    ]
    np.testing.assert_allclose(weights_evidence(comps).values, [0.75, 0.25], atol=1e-12)


def test_evidence_weights_neg_inf_drops_component():
    rng = np.random.default_rng(2)
    comps = [
        with_evidence(component(rng), -5.0),
        with_evidence(component(rng), -np.inf),
        with_evidence(component(rng), -5.0),
    ]
    w = weights_evidence(comps).values
    assert w[1] == 0.0
    np.testing.assert_allclose(w[[0, 2]], [0.5, 0.5], atol=1e-12)


def test_evidence_weights_shift_invariant():
    rng = np.random.default_rng(3)
    comps = [with_evidence(component(rng), v) for v in (-3.0, -1.0, -2.5)]
    shifted = [with_evidence(c, c.log_marglik + 123.4) for c in comps]
    np.testing.assert_allclose(
        weights_evidence(comps).values, weights_evidence(shifted).values, atol=1e-12
    )


# ---------------------------------------------------------------- mixture


def test_identical_components_collapse():
    rng = np.random.default_rng(4)
    comp = component(rng)
    x = rng.standard_normal(3)
    single = probit_predict(output_gaussian(comp, x))
    for k in (2, 5):
        model = assemble([comp] * k)
        np.testing.assert_allclose(mola_predict(model, x), single, atol=1e-12)
    # holds for the MC path too: identical components share their draw stream
    mc_single = mola_predict(assemble([comp]), x, method="mc", n_samples=200, seed=0)
    got = mola_predict(assemble([comp] * 3), x, method="mc", n_samples=200, seed=0)
    np.testing.assert_allclose(got, mc_single, atol=1e-12)


def test_degenerate_weight_selects_component():
    rng = np.random.default_rng(5)
    c1, c2 = component(rng), component(rng)
    model = assemble([c1, c2], MixtureWeights(np.array([1.0, 0.0])))
    x = rng.standard_normal(3)
    np.testing.assert_allclose(
        mola_predict(model, x), probit_predict(output_gaussian(c1, x)), atol=1e-15
    )


def test_mixture_matches_per_component_accumulation():
    rng = np.random.default_rng(6)
    comps = [component(rng) for _ in range(3)]
    w = np.array([0.5, 0.3, 0.2])
    model = assemble(comps, MixtureWeights(w))
    x = rng.standard_normal(3)
    expected = sum(
        wi * probit_predict(output_gaussian(ci, x)) for wi, ci in zip(w, comps)
    )
    np.testing.assert_allclose(mola_predict(model, x), expected, atol=1e-12)
    # MC route against the same brute-force weighted sum of per-component MC
    got = mola_predict(model, x, method="mc", n_samples=100_000, seed=9)
    mc_expected = sum(
        wi * mc_predict(output_gaussian(ci, x), n_samples=100_000, seed=9)
        for wi, ci in zip(w, comps)
    )
    np.testing.assert_allclose(got, mc_expected, atol=0.02)


def test_mixture_is_convex_combination():
    rng = np.random.default_rng(7)
    comps = [component(rng) for _ in range(4)]
    model = assemble(comps)
    for _ in range(10):
        x = rng.standard_normal(3)
        per = np.stack([probit_predict(output_gaussian(c, x)) for c in comps])
        mix = mola_predict(model, x)
        assert np.all(mix >= per.min(axis=0) - 1e-12)
        assert np.all(mix <= per.max(axis=0) + 1e-12)
        assert abs(mix.sum() - 1.0) <= 1e-10


def test_permutation_invariance_bitwise():
    rng = np.random.default_rng(8)
    comps = [component(rng) for _ in range(3)]
    w = np.array([0.2, 0.5, 0.3])
    x = rng.standard_normal(3)
    base = mola_predict(assemble(comps, MixtureWeights(w)), x)
    perm = [2, 0, 1]
    shuffled = mola_predict(
        assemble([comps[i] for i in perm], MixtureWeights(w[perm])), x
    )
    assert np.array_equal(base, shuffled)
    # the MC path derives per-component seeds from component contents, so the
    # permutation invariance holds bit for bit there as well
    base_mc = mola_predict(assemble(comps, MixtureWeights(w)), x, method="mc", seed=3)
    shuffled_mc = mola_predict(
        assemble([comps[i] for i in perm], MixtureWeights(w[perm])), x, method="mc", seed=3
    )
    assert np.array_equal(base_mc, shuffled_mc)


def test_zero_variance_mixture_equals_deep_ensemble():
    rng = np.random.default_rng(9)
    comps = [component(rng, lam=1e15) for _ in range(3)]
    # with enormous prior precision the posteriors collapse onto the means
    nets = [c.net for c in comps]
    model = assemble(comps)
    for _ in range(5):
        x = rng.standard_normal(3)
        np.testing.assert_allclose(
            mola_predict(model, x), de_predict(nets, x), atol=1e-6
        )


def test_mixture_rejects_mismatched_components():
    rng = np.random.default_rng(10)
    c1 = component(rng, c=3, p=3)
    c2 = component(rng, c=4, p=3)
    with pytest.raises(DimensionMismatch):
        assemble([c1, c2])


def test_heterogeneous_feature_widths_allowed():
    # members with different hidden widths share only input dim and classes
    rng = np.random.default_rng(11)
    from mola_kit.nn import init_mlp

    data = Dataset(rng.standard_normal((8, 2)), rng.integers(0, 3, 8), 3)
    comps = []
    for width in (4, 7):
        net = init_mlp(MlpConfig(2, (width,), 3, use_bias=False), seed=width)
        comps.append(fit(net, data, structure="kfac", prior_precision=1.0))
    model = assemble(comps)
    p = mola_predict(model, rng.standard_normal(2))
    assert abs(p.sum() - 1.0) <= 1e-10 and np.all(p >= 0)


# ---------------------------------------------------------------- baselines


def test_map_predict_values():
    net = head_only_net(np.array([[np.log(3.0), 0.0], [0.0, 0.0]]))
    x = np.array([1.0, 0.0])
    np.testing.assert_allclose(map_predict(net, x), [0.75, 0.25], atol=1e-12)
    np.testing.assert_allclose(
        map_predict(head_only_net(np.zeros((4, 2))), x), np.full(4, 0.25), atol=1e-15
    )


def test_map_predict_shift_invariance():
    rng = np.random.default_rng(12)
    head = rng.standard_normal((3, 2))
    net = head_only_net(head)
    shifted = head_only_net(head + 7.3 * np.ones((3, 1)))
    x = rng.standard_normal(2)
    np.testing.assert_allclose(map_predict(net, x), map_predict(shifted, x), atol=1e-12)


def test_de_predict_single_member():
    rng = np.random.default_rng(13)
    net = head_only_net(rng.standard_normal((3, 2)))
    x = rng.standard_normal(2)
    np.testing.assert_array_equal(de_predict([net], x), map_predict(net, x))


def test_de_predict_hand_case():
    a = np.array([np.log(3.0), 0.0])
    net_a = head_only_net(a[:, None])  # logits a * x for x = 1
    net_b = head_only_net(-a[:, None])
    x = np.array([1.0])
    np.testing.assert_allclose(de_predict([net_a, net_b], x), [0.5, 0.5], atol=1e-12)


def test_de_predict_identical_members():
    rng = np.random.default_rng(14)
    net = head_only_net(rng.standard_normal((3, 2)))
    x = rng.standard_normal(2)
    np.testing.assert_allclose(
        de_predict([net, net, net], x), map_predict(net, x), atol=1e-15
    )


def test_de_predict_dimension_checks():
    rng = np.random.default_rng(15)
    n2 = head_only_net(rng.standard_normal((3, 2)))
    n3 = head_only_net(rng.standard_normal((3, 3)))
    with pytest.raises(DimensionMismatch):
        de_predict([n2, n3], np.zeros(2))
