import numpy as np
import pytest

from phrcbench.core import Branch, StateSample, slice_windows, window_arrays
from phrcbench.datagen import gen_multimodal
from phrcbench.intent.loss import LossWeights, elbo_loss, kl_gaussian
from phrcbench.intent.model import (
    BranchModel,
    Normalization,
    decode,
    encode_future,
    encode_past,
    load_branch,
    save_branch,
)
from phrcbench.intent.predict import (
    StaleWindowError,
    _top_component_path,
    predict_dual,
    sample_best_of_n,
    sample_most_likely,
)
from phrcbench.intent.train import corpus_windows, train_windows
from phrcbench.metrics import metric_ade
from phrcbench.nn.params import ConfigError, NetConfig

SMALL = NetConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32, d_z=4, n_mix=2, dropout=0.0)
rng = np.random.default_rng(5)


def small_model(branch=Branch.ROBOT, seed=0, l_obs=8, l_fut=12, cfg=SMALL):
    return BranchModel.build(branch, cfg, seed=seed, l_obs=l_obs, l_fut=l_fut)


def rand_window(model, seed=0):
    r = np.random.default_rng(seed)
    return r.standard_normal((model.l_obs, model.input_dim))


class TestEncoders:
    def test_encode_past_deterministic(self):
        m = small_model()
        x = rand_window(m)
        g1, g2 = encode_past(m, x), encode_past(m, x)
        np.testing.assert_array_equal(g1.mean, g2.mean)
        np.testing.assert_array_equal(g1.log_var, g2.log_var)

    def test_wrong_input_dim_rejected(self):
        m = small_model()
        with pytest.raises(ConfigError):
            encode_past(m, np.zeros((8, 9)))

    def test_log_var_clamped_for_large_inputs(self):
        m = small_model()
        x = 10.0 * np.random.default_rng(0).standard_normal((m.l_obs, m.input_dim))
        g = encode_past(m, x)
        assert np.all(g.log_var >= -10.0) and np.all(g.log_var <= 10.0)

    def test_future_encoder_ignores_past_when_cross_severed(self):
        m = small_model(seed=3)
        m.store["fut.cross.attn.out.w"].values[:] = 0.0
        y = np.random.default_rng(1).standard_normal((m.l_fut, 6))
        g1 = encode_future(m, rand_window(m, 1), y)
        g2 = encode_future(m, rand_window(m, 2), y)
        np.testing.assert_array_equal(g1.mean, g2.mean)
        np.testing.assert_array_equal(g1.log_var, g2.log_var)

    def test_future_encoder_sees_past_by_default(self):
        m = small_model(seed=4)
        y = np.random.default_rng(1).standard_normal((m.l_fut, 6))
        x1 = rand_window(m, 1)
        x2 = x1.copy()
        x2[3] += 0.5  # single past sample changed
        g1, g2 = encode_future(m, x1, y), encode_future(m, x2, y)
        assert np.max(np.abs(g1.mean - g2.mean)) > 0


class TestDecode:
    def test_weights_on_simplex_and_var_floor(self):
        m = small_model()
        gmm = decode(m, rand_window(m), np.zeros(m.config.d_z))
        np.testing.assert_allclose(gmm.weights.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(gmm.variances >= 1e-8)
        assert gmm.n_steps == m.l_fut

    def test_rejects_non_finite_latent(self):
        m = small_model()
        with pytest.raises(ValueError):
            decode(m, rand_window(m), np.full(m.config.d_z, np.nan))

    def test_elbo_matches_numpy_with_identity_norm(self):
        m = small_model(seed=9)
        m.norm = Normalization.identity(m.input_dim)
        x = rand_window(m, 3)
        y = np.random.default_rng(4).standard_normal((m.l_fut, 6))
        p = encode_past(m, x)
        q = encode_future(m, x, y)
        eps = np.random.default_rng(5).standard_normal(m.config.d_z)
        z = q.mean + q.std * eps
        gmm = decode(m, x, z)
        w = LossWeights(kl_weight=1.3, recon_weight=0.7)
        via_op = elbo_loss(p, q, gmm, y, w)

        from phrcbench.intent.model import _Ctx, training_graph

        loss, kl, recon = training_graph(m, x[None], y[None], eps[None], w, _Ctx())
        assert via_op == pytest.approx(loss.item(), rel=1e-9)
        assert kl_gaussian(q, p) == pytest.approx(kl.item(), rel=1e-9)


class TestSampling:
    def test_most_likely_deterministic(self):
        m = small_model()
        x = rand_window(m)
        np.testing.assert_array_equal(sample_most_likely(m, x), sample_most_likely(m, x))

    def test_single_component_equals_component_mean(self):
        cfg = NetConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32, d_z=4, n_mix=1, dropout=0.0)
        m = small_model(cfg=cfg)
        x = rand_window(m)
        p = encode_past(m, x)
        gmm = decode(m, x, p.mean)
        np.testing.assert_allclose(sample_most_likely(m, x), gmm.means[:, 0], atol=1e-12)

    def test_tie_breaks_to_lowest_index(self):
        weights = np.array([[0.25, 0.25, 0.25, 0.25]])
        means = np.arange(24, dtype=float).reshape(1, 4, 6)
        np.testing.assert_array_equal(_top_component_path(weights, means)[0], means[0, 0])

    def test_best_of_one_equals_most_likely(self):
        m = small_model()
        x = rand_window(m)
        gt = np.random.default_rng(2).standard_normal((m.l_fut, 6))
        best, ade = sample_best_of_n(m, x, 1, gt, seed=0)
        np.testing.assert_array_equal(best, sample_most_likely(m, x))
        assert ade == pytest.approx(metric_ade(best, gt))

    def test_best_of_n_not_worse_than_most_likely(self):
        m = small_model()
        x = rand_window(m)
        gt = np.random.default_rng(2).standard_normal((m.l_fut, 6))
        ml_ade = metric_ade(sample_most_likely(m, x), gt)
        _, ade = sample_best_of_n(m, x, 5, gt, seed=1)
        assert ade <= ml_ade + 1e-12

    def test_best_of_n_seed_reproducible(self):
        m = small_model()
        x = rand_window(m)
        gt = np.random.default_rng(2).standard_normal((m.l_fut, 6))
        b1, a1 = sample_best_of_n(m, x, 8, gt, seed=123)
        b2, a2 = sample_best_of_n(m, x, 8, gt, seed=123)
        np.testing.assert_array_equal(b1, b2)
        assert a1 == a2


class TestPredictDual:
    def _windows(self, shift=0.0):
        r = np.random.default_rng(0)
        dt = 0.01
        past_r = [StateSample(t=k * dt, pos=r.standard_normal(3), vel=r.standard_normal(3))
                  for k in range(8)]
        past_h = [StateSample(t=k * dt + shift, pos=r.standard_normal(3), vel=r.standard_normal(3),
                              force=r.standard_normal(3)) for k in range(8)]
        return past_r, past_h

    def test_returns_two_horizons(self):
        rm = small_model(Branch.ROBOT, seed=1)
        hm = small_model(Branch.HUMAN, seed=2)
        past_r, past_h = self._windows()
        y_r, y_h = predict_dual(rm, hm, past_r, past_h)
        assert y_r.shape == (12, 6) and y_h.shape == (12, 6)
        assert np.all(np.isfinite(y_r)) and np.all(np.isfinite(y_h))

    def test_stale_windows_rejected(self):
        rm = small_model(Branch.ROBOT, seed=1)
        hm = small_model(Branch.HUMAN, seed=2)
        past_r, past_h = self._windows(shift=0.02)
        with pytest.raises(StaleWindowError):
            predict_dual(rm, hm, past_r, past_h)

    def test_robot_branch_has_no_force_channel(self):
        rm = small_model(Branch.ROBOT)
        assert rm.input_dim == 6
        assert small_model(Branch.HUMAN).input_dim == 9


class TestTraining:
    def test_empty_corpus_rejected(self):
        m = small_model()
        with pytest.raises(ValueError):
            train_windows(m, np.zeros((0, 8, 6)), np.zeros((0, 12, 6)), epochs=1, batch=4, lr=1e-3)

    def test_branch_mismatch_rejected(self):
        from phrcbench.intent.train import train

        trajs = gen_multimodal(2, dt=0.05, seed=0, per_family=2)
        m = small_model(Branch.HUMAN)
        with pytest.raises(ValueError):
            train(m, trajs, epochs=1, batch=4, lr=1e-3)

    def test_training_deterministic(self, tmp_path):
        trajs = gen_multimodal(4, dt=0.05, seed=1, per_family=4)
        x, y = corpus_windows(trajs, 8, 12, stride=10)
        reports = []
        paths = []
        for run in range(2):
            m = small_model(seed=7)
            path = tmp_path / f"m{run}.ckpt"
            rep = train_windows(m, x, y, epochs=3, batch=16, lr=1e-3, seed=42, checkpoint_path=path)
            reports.append([(e.loss, e.kl, e.recon) for e in rep.epochs])
            paths.append(path)
        assert reports[0] == reports[1]
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_losses_finite(self):
        trajs = gen_multimodal(2, dt=0.05, seed=2, per_family=2)
        x, y = corpus_windows(trajs, 8, 12, stride=10)
        m = small_model(seed=3)
        rep = train_windows(m, x, y, epochs=2, batch=8, lr=1e-3, seed=0)
        assert all(np.isfinite(e.loss) for e in rep.epochs)


class TestPersistence:
    def test_branch_roundtrip(self, tmp_path):
        m = small_model(Branch.HUMAN, seed=6)
        m.norm = Normalization(
            in_mean=rng.standard_normal(9), in_std=np.abs(rng.standard_normal(9)) + 0.5,
            out_mean=rng.standard_normal(6), out_std=np.abs(rng.standard_normal(6)) + 0.5,
        )
        path = tmp_path / "h.ckpt"
        save_branch(m, path)
        m2 = load_branch(path)
        assert m2.branch is Branch.HUMAN
        assert m2.config == m.config
        assert m2.l_obs == m.l_obs and m2.l_fut == m.l_fut
        for p in m.store:
            np.testing.assert_array_equal(m2.store[p.name].values, p.values)
        x = rand_window(m, 9)
        np.testing.assert_array_equal(sample_most_likely(m, x), sample_most_likely(m2, x))


PER_FAMILY = 40
N_FAMILIES = 4


@pytest.fixture(scope="module")
def two_mode_setup():
    """Left/right bifurcating families plus a model trained on most of each
    family; the held-out trajectories provide the test windows."""
    trajs = gen_multimodal(PER_FAMILY * N_FAMILIES, dt=0.05, seed=21,
                           per_family=PER_FAMILY, k_choices=(2,))
    families = [trajs[f * PER_FAMILY : (f + 1) * PER_FAMILY] for f in range(N_FAMILIES)]
    train_set = [t for fam in families for t in fam[:30]]
    cfg = NetConfig(d_model=32, n_heads=4, n_layers=2, d_ff=64, d_z=8, n_mix=3, dropout=0.0)
    model = BranchModel.build(Branch.ROBOT, cfg, seed=0)
    x, y = corpus_windows(train_set, 8, 12, stride=4)
    train_windows(model, x, y, epochs=40, batch=128, lr=2e-3, seed=0)
    return model, families


def _divergence_index(family):
    """First step where the family's trajectories have spread apart."""
    pos = np.array([[s.pos for s in t.samples] for t in family])
    spread = np.linalg.norm(pos - pos.mean(axis=0), axis=2).max(axis=0)
    above = np.flatnonzero(spread > 0.02)
    return int(above[0]) if above.size else pos.shape[1] // 2


def _family_cases(family, l_obs=8, l_fut=12):
    """(window, gt, cluster centers) for the held-out trajectories of a family,
    with the window's future crossing the bifurcation."""
    div = _divergence_index(family)
    finals = np.array([t.samples[-1].pos for t in family])
    centered = finals - finals.mean(axis=0)
    axis = np.linalg.svd(centered)[2][0]
    side = centered @ axis > 0
    if side.all() or (~side).all():
        return []
    centers = np.stack([finals[side].mean(axis=0), finals[~side].mean(axis=0)])
    cases = []
    for traj in family[30:]:
        n = len(traj)
        i = min(max(div - 6, l_obs - 1), n - l_fut - 1)
        w = slice_windows(traj, l_obs, l_fut, 1)[i - (l_obs - 1)]
        x, y = window_arrays(w, traj.branch)
        cases.append((x, y, centers))
    return cases


@pytest.mark.slow
class TestTwoModeBehavior:
    def test_distinct_latents_give_distinct_means(self, two_mode_setup):
        model, families = two_mode_setup
        x, _, _ = _family_cases(families[0])[0]
        p = encode_past(model, x)
        g1 = decode(model, x, p.mean - 2.0 * p.std)
        g2 = decode(model, x, p.mean + 2.0 * p.std)
        assert np.max(np.abs(g1.top_component_means() - g2.top_component_means())) > 1e-3

    def test_best_of_20_beats_most_likely_on_average(self, two_mode_setup):
        model, families = two_mode_setup
        ml, bo = [], []
        i = 0
        for fam in families:
            for x, y, _ in _family_cases(fam):
                ml.append(metric_ade(sample_most_likely(model, x), y))
                bo.append(sample_best_of_n(model, x, 20, y, seed=100 + i)[1])
                i += 1
        assert np.mean(bo) < np.mean(ml)

    def test_latent_samples_cover_both_modes(self, two_mode_setup):
        from phrcbench.intent.model import decode_arrays

        model, families = two_mode_setup
        covered, total = 0, 0
        for fam in families:
            for i, (x, y, centers) in enumerate(_family_cases(fam)):
                p = encode_past(model, x)
                r = np.random.default_rng(500 + total)
                z = p.mean + p.std * r.standard_normal((20, p.mean.size))
                w, means, _ = decode_arrays(model, x[None], z)
                ends = _top_component_path(w, means)[:, -1, :3]
                assign = np.argmin(
                    np.linalg.norm(ends[:, None, :] - centers[None], axis=2), axis=1
                )
                covered += len(set(assign.tolist())) == 2
                total += 1
        assert covered / total >= 0.9
