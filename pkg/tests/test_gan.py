import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exprgen import gan
from exprgen.errors import BatchSizeError, ConfigurationError, DimensionError, InputRangeError, StateError
from exprgen.gradcheck import max_relative_error, numeric_gradient
from exprgen.tensor import Dropout

REDUCED = dict(map_shape=(8, 8), upsample=(2, 2), gen_channels=(8, 4), disc_channels=(4, 8), disc_dense=16)


def reduced(seed=0, **kw):
    return gan.build_architecture(64, "custom", seed=seed, **{**REDUCED, **kw})


def toy_maps(rng, n, inverse=False, noise=0.05):
    base = np.zeros((8, 8))
    base[:, :4], base[:, 4:] = 0.8, 0.2
    if inverse:
        base = 1.0 - base
    return np.clip(base.reshape(1, 64) + rng.normal(0.0, noise, (n, 64)), 0.0, 1.0)


def snapshot(seq):
    return {k: v.copy() for k, v in seq.state().items()}


def same(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


class TestPlan:
    def test_breast_map(self):
        p = gan.plan_architecture(40992, "breast")
        assert p.map_shape == (224, 183)
        assert p.grid == (7, 61) and p.base_channels == 96
        assert 7 * 61 * 96 == 40992
        assert p.upsample == (32, 3) and p.gen_channels == (48, 32)

    def test_prostate_map(self):
        p = gan.plan_architecture(12600, "prostate")
        assert p.map_shape == (140, 90) and p.grid == (14, 9) and p.base_channels == 100
        assert p.gen_channels == (50, 25)

    def test_factorization_is_closest_to_square(self):
        for n, up in [(40992, (32, 3)), (12600, (10, 10)), (64, (2, 2)), (96, (4, 2))]:
            rows, cols = gan.factorize_map(n, up)
            brute = min(
                (abs(r - n // r), r < n // r, r) for r in range(1, n + 1)
                if n % r == 0 and r % up[0] == 0 and (n // r) % up[1] == 0
            )
            assert (rows, cols) == (brute[2], n // brute[2])

    def test_non_factorizable_suggests_counts(self):
        with pytest.raises(ConfigurationError, match="40896 or 40992"):
            gan.plan_architecture(40990, "breast")

    def test_bad_explicit_map_and_dataset(self):
        with pytest.raises(ConfigurationError):
            gan.plan_architecture(64, "custom", map_shape=(4, 16), upsample=(3, 2), gen_channels=(2, 2))
        with pytest.raises(ConfigurationError):
            gan.plan_architecture(64, "lung")
        with pytest.raises(ConfigurationError):
            gan.plan_architecture(64, "custom")

    @pytest.mark.parametrize("genes,dataset,shape", [(40992, "breast", (224, 183)), (12600, "prostate", (140, 90))])
    def test_full_size_generator_shape(self, genes, dataset, shape):
        plan = gan.plan_architecture(genes, dataset)
        g = gan.build_generator(plan, np.random.default_rng(0))
        out = g.forward(np.random.default_rng(1).random((2, 100)), train=False)
        assert out.shape == (2,) + shape + (1,)
        assert shape[0] * shape[1] == genes
        assert np.all((out > 0) & (out < 1))

    def test_discriminator_head_has_two_units(self):
        m = reduced()
        assert m.discriminator.layers[-2].n_out == 2
        assert m.noise_dim == 100


class TestForward:
    def test_shapes_and_range(self):
        m = reduced()
        x = gan.generate(m, np.random.default_rng(0).random((5, 100)))
        assert x.shape == (5, 8, 8, 1)
        assert np.all((x > 0) & (x < 1))
        s = gan.discriminate(m, x)
        assert s.shape == (5, 2) and np.all((s > 0) & (s < 1))

    def test_identical_noise_identical_output(self):
        m = reduced()
        z = np.repeat(np.random.default_rng(3).random((1, 100)), 4, axis=0)
        x = gan.generate(m, z)
        assert all(np.array_equal(x[0], x[i]) for i in range(4))

    def test_zero_final_dense_gives_half(self):
        m = reduced()
        head = m.discriminator.layers[-2]
        head.params["W"][:] = 0.0
        head.params["b"][:] = 0.0
        s = gan.discriminate(m, np.random.default_rng(0).random((3, 64)))
        assert np.array_equal(s, np.full((3, 2), 0.5))

    def test_errors(self):
        m = reduced()
        with pytest.raises(DimensionError):
            gan.generate(m, np.zeros((2, 99)))
        with pytest.raises(InputRangeError):
            gan.generate(m, np.full((2, 100), 1.5))
        with pytest.raises(DimensionError):
            gan.discriminate(m, np.zeros((2, 7, 8, 1)))
        with pytest.raises(DimensionError):
            gan.discriminate(m, np.zeros((2, 63)))


class TestLoss:
    def test_uniform_scores(self):
        loss_d, _ = gan.gan_loss(np.full(7, 0.5), np.full(7, 0.5))
        assert abs(-loss_d - (-2 * math.log(2))) <= 1e-12

    def test_perfect_discriminator_hits_clamp_floor(self):
        loss_d, _ = gan.gan_loss(np.ones(4), np.zeros(4))
        assert 0.0 < loss_d <= 2 * 1.1e-7

    def test_generator_loss_decreases_with_fake_score(self):
        vals = [gan.gan_loss([0.5], [s])[1] for s in (0.1, 0.5, 0.9, 0.999)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        ns = [gan.gan_loss([0.5], [s], non_saturating=True)[1] for s in (0.1, 0.5, 0.9)]
        assert all(b < a for a, b in zip(ns, ns[1:]))

    def test_finite_at_extremes(self):
        assert all(math.isfinite(v) for v in gan.gan_loss([0.0, 1.0], [0.0, 1.0]))


def _frozen_dropout(model, seed=1234):
    for layer in model.discriminator.layers:
        if isinstance(layer, Dropout):
            layer.rng = np.random.default_rng(seed)


@pytest.mark.parametrize("seed", range(3))
def test_discriminator_gradient_matches_finite_differences(seed):
    m = reduced(seed, gen_channels=(3, 2), disc_channels=(2, 3), disc_dense=5)
    rng = np.random.default_rng(seed)
    real, fake = rng.random((3, 8, 8, 1)), rng.random((3, 8, 8, 1))
    _frozen_dropout(m)
    _, _, layer_grads = gan.discriminator_gradients(m, real, fake)

    def loss():
        _frozen_dropout(m)
        scores = m.discriminator.forward(np.concatenate([real, fake]), train=True)
        return gan.discriminator_objective(scores[:3], scores[3:])[0]

    for layer, lg in zip(m.discriminator.layers, layer_grads):
        for name, g in lg.param_grads.items():
            num = numeric_gradient(loss, layer.params[name])
            assert max_relative_error(g, num) <= 1e-4, (type(layer).__name__, name)


def test_generator_step_gradient_direction():
    # a small generator step must not raise the saturating generator loss on the same noise
    m = reduced(2)
    z = np.random.default_rng(0).random((6, 100))
    _frozen_dropout(m)
    before = gan.gan_loss([0.5], gan.discriminate(m, gan.generate(m, z, train=True, update_stats=False), train=False)[:, 0])[1]
    _frozen_dropout(m)
    gan.generator_step(m, z, 1e-3)
    after = gan.gan_loss([0.5], gan.discriminate(m, gan.generate(m, z, train=True, update_stats=False), train=False)[:, 0])[1]
    assert after <= before + 1e-9


class TestFreeze:
    def test_generator_step_leaves_discriminator(self):
        m = reduced()
        d0 = snapshot(m.discriminator)
        g0 = snapshot(m.generator)
        gan.generator_step(m, np.random.default_rng(0).random((4, 100)), 0.1)
        assert same(d0, snapshot(m.discriminator))
        assert not same(g0, snapshot(m.generator))

    def test_discriminator_step_leaves_generator(self):
        m = reduced()
        rng = np.random.default_rng(0)
        g0 = snapshot(m.generator)  # includes batch-norm running statistics
        d0 = snapshot(m.discriminator)
        gan.discriminator_step(m, rng.random((4, 64)), rng.random((4, 100)), 0.1)
        assert same(g0, snapshot(m.generator))
        assert not same(d0, snapshot(m.discriminator))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(1e-4, 1.0))
    def test_freeze_property(self, seed, lr):
        m = reduced(seed % 7)
        rng = np.random.default_rng(seed)
        g0, d0 = snapshot(m.generator), snapshot(m.discriminator)
        gan.discriminator_step(m, rng.random((3, 64)), rng.random((3, 100)), lr)
        assert same(g0, snapshot(m.generator))
        d1 = snapshot(m.discriminator)
        gan.generator_step(m, rng.random((3, 100)), lr)
        assert same(d1, snapshot(m.discriminator))
        assert d0.keys() == d1.keys()


def test_optimal_discriminator_on_identical_pools():
    # real and generated pools drawn from the same enumerable distribution: the best D is 1/2 everywhere
    rng = np.random.default_rng(0)
    support = (rng.random((4, 64)) > 0.5).astype(float)
    m = reduced(0)
    for _ in range(300):
        real = support[rng.integers(0, 4, 8)]
        fake = support[rng.integers(0, 4, 8)]
        scores = m.discriminator.forward(np.concatenate([real, fake]).reshape(-1, 8, 8, 1), train=True)
        _, grad = gan.discriminator_objective(scores[:8], scores[8:])
        _, grads = m.discriminator.backward(grad)
        m.discriminator.sgd_step(grads, 0.05)
    s = gan.discriminate(m, support)[:, 0]
    assert np.all((s >= 0.4) & (s <= 0.6))


class TestTrain:
    def test_trace_layout_and_csv(self):
        m = reduced()
        data = toy_maps(np.random.default_rng(0), 10)
        cfg = gan.GanTrainConfig(alpha_d=0.01, alpha_g=0.01, k=2, m=4, epochs=2, seed=0)
        trace = gan.train(m, data, cfg)
        per_epoch = gan.iterations_per_epoch(10, cfg)
        assert per_epoch == 2
        assert len(trace.phase("g")) == 2 * per_epoch and len(trace.phase("d")) == 2 * 2 * per_epoch
        assert [r.phase for r in trace.rows[:3]] == ["d", "d", "g"]
        lines = trace.to_csv().strip().split("\n")
        assert lines[0] == "step,phase,loss,mean_real_score,mean_fake_score"
        g_line = lines[3].split(",")
        assert g_line[1] == "g" and g_line[3] == ""
        assert m.steps_trained == 4

    def test_bit_reproducible(self):
        data = toy_maps(np.random.default_rng(0), 12)
        cfg = gan.GanTrainConfig(alpha_d=0.05, alpha_g=0.05, m=4, epochs=3, seed=5)
        a, b = reduced(1), reduced(1)
        assert gan.train(a, data, cfg).to_csv() == gan.train(b, data, cfg).to_csv()
        assert same(snapshot(a.generator), snapshot(b.generator))

    def test_errors(self):
        m = reduced()
        with pytest.raises(BatchSizeError):
            gan.train(m, toy_maps(np.random.default_rng(0), 3), gan.GanTrainConfig(m=4))
        with pytest.raises(InputRangeError):
            gan.train(m, np.full((5, 64), 2.0), gan.GanTrainConfig(m=4))
        with pytest.raises(ConfigurationError):
            gan.GanTrainConfig(k=0)
        with pytest.raises(ConfigurationError):
            gan.GanTrainConfig(alpha_d=0.0)


class TestMembership:
    def test_untrained_model_rejected(self):
        with pytest.raises(StateError):
            gan.classify_by_membership(reduced(), np.zeros((2, 64)))

    def test_tie_counts_as_in_class(self):
        m = reduced()
        m.steps_trained = 1
        head = m.discriminator.layers[-2]
        head.params["W"][:] = 0.0
        head.params["b"][:] = 0.0
        r = gan.classify_by_membership(m, np.zeros((3, 64)), threshold=0.5)
        assert np.all(r.scores == 0.5) and np.all(r.in_class)

    def test_threshold_monotone(self):
        m = reduced()
        m.steps_trained = 1
        x = np.random.default_rng(0).random((20, 64))
        counts = [gan.classify_by_membership(m, x, t).in_class.sum() for t in (0.0, 0.3, 0.5, 0.7, 1.0)]
        assert counts[0] == 20 and all(b <= a for a, b in zip(counts, counts[1:]))


def test_checkpoint_round_trip(tmp_path):
    m = reduced(4)
    gan.train(m, toy_maps(np.random.default_rng(0), 8), gan.GanTrainConfig(alpha_d=0.05, alpha_g=0.05, m=4, epochs=1))
    m.save(tmp_path / "gan.npz", dataset_note="toy")
    back = gan.GanModel.load(tmp_path / "gan.npz")
    assert back.plan == m.plan and back.steps_trained == m.steps_trained
    assert same(snapshot(m.generator), snapshot(back.generator))
    assert same(snapshot(m.discriminator), snapshot(back.discriminator))
    z = np.random.default_rng(1).random((3, 100))
    assert np.array_equal(gan.generate(m, z), gan.generate(back, z))
