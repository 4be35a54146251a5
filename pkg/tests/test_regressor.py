import numpy as np
import pytest

from segqc.errors import DegenerateInputError, ShapeMismatchError
from segqc.regressor import (
    FEATURE_NAMES,
    RegressorModel,
    TrainConfig,
    boundary_voxel_count,
    extract_features,
    huber_loss,
    load_model,
    loss_and_grad,
    predict,
    save_model,
    train_regressor,
)

FEATURE = {name: i for i, name in enumerate(FEATURE_NAMES)}


def linear_dataset(rng, n, n_noise=3):
    X = rng.normal(size=(n, 1 + n_noise))
    X[:, 0] = rng.uniform(-0.5, 1.5, size=n)
    y = np.clip(0.2 + 0.6 * X[:, 0], 0.0, 1.0)
    return X, y


class TestFeatures:
    def test_all_zero(self):
        f = extract_features(np.zeros((3, 3, 3)), np.zeros((3, 3, 3)), "image")
        for name in ("aux_mean", "aux_std", "aux_min", "aux_max", "aux_vs", "pred_vs", "lesion_voxels",
                     "aux_mean_inside", "aux_mean_outside", "boundary_voxels"):
            assert f[FEATURE[name]] == 0.0, name
        assert f[FEATURE["aux_hist_0"]] == 1.0
        assert f[FEATURE["aux_hist_1"]: FEATURE["aux_hist_7"] + 1].sum() == 0.0

    def test_single_voxel_lesion(self):
        aux = np.full((3, 3, 3), 0.5)
        pred = np.zeros((3, 3, 3))
        pred[1, 1, 1] = 1.0
        f = extract_features(aux, pred, "uncertainty")
        assert f[FEATURE["lesion_voxels"]] == 1
        assert f[FEATURE["boundary_voxels"]] == 1
        assert f[FEATURE["aux_mean_inside"]] == 0.5
        assert f[FEATURE["aux_mean_outside"]] == 0.5
        assert f[FEATURE["aux_vs"]] == 13.5
        assert f[FEATURE["pred_vs"]] == 1.0

    def test_same_length_for_every_kind(self, rng):
        aux, pred = rng.uniform(size=(2, 4, 4, 4))
        lengths = {len(extract_features(aux, pred, k)) for k in ("image", "uncertainty", "error")}
        assert lengths == {len(FEATURE_NAMES)}

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            extract_features(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))

    def test_boundary_of_solid_cube(self):
        m = np.zeros((5, 5, 5), dtype=bool)
        m[1:4, 1:4, 1:4] = True
        # 27 voxels, only the centre has all six neighbours inside
        assert boundary_voxel_count(m) == 26

    def test_boundary_counts_grid_edge_as_background(self):
        assert boundary_voxel_count(np.ones((3, 3, 3), dtype=bool)) == 26


class TestHuber:
    def test_zero(self):
        assert huber_loss(0.7, 0.7, 1.0) == 0.0

    def test_quadratic_branch(self):
        assert huber_loss(1.0, 0.5, 1.0) == 0.125

    def test_linear_branch(self):
        assert huber_loss(2.0, 0.0, 1.0) == 1.5

    def test_continuous_at_delta_one(self):
        assert huber_loss(1.0, 0.0, 1.0) == 0.5
        assert huber_loss(1.0 + 1e-12, 0.0, 1.0) == pytest.approx(0.5, abs=1e-11)

    def test_literal_linear_branch_for_other_delta(self):
        # delta*|r| - delta/2, not delta*|r| - delta**2/2
        assert huber_loss(3.0, 0.0, 2.0) == 2.0 * 3.0 - 1.0

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            huber_loss(1.0, 0.0, 0.0)


def _random_params(rng, d, h):
    return [rng.normal(size=(h, d)), rng.normal(size=h), rng.normal(size=h), np.float64(rng.normal())]


def _numeric_grad(params, Z, y, delta, step=1e-5):
    grads = []
    for i, p in enumerate(params):
        p = np.array(p, dtype=np.float64)
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() if hasattr(q, "copy") else q for q in params]
            minus = [q.copy() if hasattr(q, "copy") else q for q in params]
            pp, pm = p.copy(), p.copy()
            pp[idx] += step
            pm[idx] -= step
            plus[i], minus[i] = pp, pm
            g[idx] = (loss_and_grad(plus, Z, y, delta)[0] - loss_and_grad(minus, Z, y, delta)[0]) / (2 * step)
        grads.append(g)
    return grads


@pytest.mark.parametrize("branch", ["quadratic", "linear"])
def test_gradient_matches_finite_differences(branch):
    rng = np.random.default_rng(7 if branch == "quadratic" else 8)
    d, h, n = 4, 5, 12
    for _ in range(10):
        params = _random_params(rng, d, h)
        Z = rng.normal(size=(n, d))
        out = loss_and_grad(params, Z, np.zeros(n), 1.0)
        raw = np.tanh(Z @ params[0].T + params[1]) @ params[2] + params[3]
        if branch == "quadratic":
            delta = 1e3
            y = raw + rng.uniform(-1, 1, size=n)
        else:
            delta = 0.05
            y = raw + rng.choice([-1, 1], size=n) * rng.uniform(0.5, 2.0, size=n)
        assert (np.abs(y - raw) <= delta).all() == (branch == "quadratic")
        assert (np.abs(y - raw) > delta).all() == (branch == "linear")
        _, analytic = loss_and_grad(params, Z, y, delta)
        numeric = _numeric_grad(params, Z, y, delta)
        a = np.concatenate([np.ravel(g) for g in analytic])
        b = np.concatenate([np.ravel(g) for g in numeric])
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-4
        del out


class TestTraining:
    def test_learns_linear_relation(self, rng):
        X, y = linear_dataset(rng, 200)
        Xt, yt = linear_dataset(rng, 100)
        model, history = train_regressor((X, y), TrainConfig(seed=3))
        assert len(history) == 200
        assert np.mean(np.abs(model.predict_batch(Xt) - yt)) <= 0.05

    def test_bit_deterministic(self, rng):
        X, y = linear_dataset(rng, 64)
        cfg = TrainConfig(seed=11, epochs=20)
        m1, h1 = train_regressor((X, y), cfg)
        m2, h2 = train_regressor((X, y), cfg)
        assert h1 == h2
        np.testing.assert_array_equal(m1.W1, m2.W1)
        assert m1.b2 == m2.b2

    def test_pairs_and_arrays_agree(self, rng):
        X, y = linear_dataset(rng, 32)
        cfg = TrainConfig(seed=1, epochs=5)
        _, h1 = train_regressor((X, y), cfg)
        _, h2 = train_regressor(list(zip(X, y)), cfg)
        assert h1 == h2

    def test_constant_targets_refused(self, rng):
        X = rng.normal(size=(20, 3))
        with pytest.raises(DegenerateInputError):
            train_regressor((X, np.full(20, 0.8)))

    def test_too_small_dataset(self, rng):
        X, y = linear_dataset(rng, 10)
        with pytest.raises(ValueError):
            train_regressor((X, y), TrainConfig(batch_size=8))

    def test_standardization_and_dropped_features(self, rng):
        X, y = linear_dataset(rng, 50)
        X = np.column_stack([X, np.full(50, 3.0)])
        model, _ = train_regressor((X, y), TrainConfig(epochs=1))
        assert model.dropped == [X.shape[1] - 1]
        Z = model.standardize(X)
        np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-9)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(beta1=1.0)


def _zero_model(n_features=2, hidden=3, b2=0.0):
    return RegressorModel(
        kind="image", n_features=n_features, keep=np.arange(n_features), mean=np.zeros(n_features),
        std=np.ones(n_features), W1=np.zeros((hidden, n_features)), b1=np.zeros(hidden),
        w2=np.zeros(hidden), b2=b2,
    )


class TestPredict:
    def test_zero_weights(self):
        assert predict(_zero_model(), [0.3, -2.0]) == 0.0

    def test_clamped_above(self):
        m = _zero_model(b2=1.3)
        assert m.raw_output([[0.0, 0.0]])[0] == 1.3
        assert predict(m, [0.0, 0.0]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            predict(_zero_model(), [1.0, 2.0, 3.0])

    def test_save_load_bit_exact(self, tmp_path, rng):
        X, y = linear_dataset(rng, 40)
        model, _ = train_regressor((X, y), TrainConfig(epochs=10, seed=4))
        path = tmp_path / "model.json"
        save_model(model, path)
        back = load_model(path)
        np.testing.assert_array_equal(back.raw_output(X), model.raw_output(X))
        save_model(back, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_text() == path.read_text()
