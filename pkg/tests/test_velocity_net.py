import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from aeroio.eskf import FilterConfig, run_filter
from aeroio.exceptions import DivergenceDetected, ParseError
from aeroio.sensor_sim import SensorFrame
from aeroio.velocity_net import serialization
from aeroio.velocity_net.estimator import NetVelocityPredictor, RotorNormalizer, VelocityRegressor
from aeroio.velocity_net.gradcheck import gradient_check
from aeroio.velocity_net.losses import huber_batch, huber_loss, nll_batch, nll_loss
from aeroio.velocity_net.model import NetConfig, backward, forward, init_params, param_shapes, positional_table
from aeroio.velocity_net.training import TrainConfig, loss_and_grad, train
from aeroio.velocity_net.windows import RunningStats, hover_stats, make_windows, normalize_window

SMALL = NetConfig(n_channels=7, conv_channels=(4, 8), kernel_size=3, n_heads=2, d_ff=8)

# -- losses -------------------------------------------------------------------


def test_huber_values():
    assert huber_loss([0.1, 0, 0], [0, 0, 0], 1.0) == pytest.approx(0.005, abs=1e-15)
    assert huber_loss([2, 0, 0], [0, 0, 0], 1.0) == 1.5
    for delta in (0.3, 1.0, 2.5):
        below = huber_loss([delta * (1 - 1e-12), 0, 0], [0, 0, 0], delta)
        at = huber_loss([delta, 0, 0], [0, 0, 0], delta)
        assert at == pytest.approx(0.5 * delta**2, abs=1e-12)
        assert below == pytest.approx(0.5 * delta**2, abs=1e-11)


def test_nll_values():
    assert nll_loss([1, 0, 0], [0, 0, 0], [1, 1, 1]) == 1.0
    assert nll_loss([0, 0, 0], [0, 0, 0], [np.e] * 3) == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(ValueError):
        nll_loss([0, 0, 0], [0, 0, 0], [1, 0, 1])


@pytest.mark.parametrize("r", [0.3, 1.0, 2.2])
def test_nll_minimizer_is_squared_residual(r):
    grid = np.linspace(0.01, 6.0, 60_000)
    vals = [nll_loss([r, 0, 0], [0, 0, 0], [s, 1.0, 1.0]) for s in grid]
    assert grid[int(np.argmin(vals))] == pytest.approx(r * r, abs=2e-4)


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(0.1, 3.0))
def test_batch_losses_agree_with_scalar(r, delta):
    v, v_hat, log_var = np.zeros((1, 3)), np.array([r]), np.array([[0.1, -0.2, 0.3]])
    assert huber_batch(v, v_hat, delta)[0] == pytest.approx(huber_loss(v[0], v_hat[0], delta), abs=1e-12)
    assert nll_batch(v, v_hat, log_var)[0] == pytest.approx(nll_loss(v[0], v_hat[0], np.exp(log_var[0])), abs=1e-12)


# -- normalization and windows --------------------------------------------------


def welford_oracle(prior_mean, prior_std, prior_count, xs):
    """Batch recomputation treating the prior as ``prior_count`` pseudo-samples."""
    out = []
    for k in range(1, len(xs) + 1):
        seen = np.asarray(xs[:k])
        n = prior_count + k
        mean = (prior_count * prior_mean + seen.sum()) / n
        m2 = prior_count * prior_std**2 + prior_count * (prior_mean - mean) ** 2 + np.sum((seen - mean) ** 2)
        out.append((xs[k - 1] - mean) / np.sqrt(m2 / n))
    return np.array(out)


def test_running_stats_match_batch_oracle():
    xs = np.random.default_rng(0).normal(1000.0, 80.0, 300)
    stats = RunningStats(990.0, 99.0, prior_count=100.0)
    got = np.array([stats.push(x) for x in xs])
    np.testing.assert_allclose(got, welford_oracle(990.0, 99.0, 100.0, xs), atol=1e-12)


def _frames(n, omega, accel=(0.0, 0.0, 9.81)):
    return [SensorFrame(0.01 * i, np.zeros(3), np.array(accel), np.full(4, omega)) for i in range(n)]


def test_constant_rotor_stream_standardizes_to_zero():
    stats = hover_stats(1000.0, prior_count=50.0)
    first = normalize_window(_frames(10, 1100.0), stats)[0, 6]
    late = normalize_window(_frames(20_000, 1100.0), stats)[-1, 6]
    assert first > 0.9 and abs(late) < 0.05 * first


def test_hover_accel_channel_is_one():
    out = normalize_window(_frames(5, 990.0), hover_stats(990.0))
    np.testing.assert_allclose(out[:, 5], 1.0, atol=1e-15)
    np.testing.assert_array_equal(out[:, 3:5], 0.0)
    assert out.shape == (5, 7)
    assert normalize_window(_frames(5, 990.0), hover_stats(990.0), use_rotor=False).shape == (5, 6)
    assert normalize_window(_frames(5, 990.0), hover_stats(990.0), rotor_channels="four").shape == (5, 10)


def test_window_counts_and_targets(noisy_seq):
    seq = noisy_seq
    short = type(seq)(seq.t[:300], seq.gyro[:300], seq.accel[:300], seq.rotor[:300],
                      type(seq.truth)(*(getattr(seq.truth, f)[:300] for f in ("t", "R", "p", "v", "omega_body",
                                                                               "a_world", "yaw"))))
    X, y, ends = make_windows(short, "online", 100, 990.0)
    assert X.shape == (201, 100, 7) and y.shape == (201, 3)
    vb = short.truth.body_velocity
    for k in (0, 57, 200):
        assert ends[k] == k + 99
        np.testing.assert_array_equal(y[k], vb[k + 99])
    Xo, yo, ends_o = make_windows(short, "offline", 100, 990.0)
    assert Xo.shape == (3, 100, 7) and yo.shape == (3, 100, 3)
    np.testing.assert_array_equal(yo[1], vb[100:200])
    np.testing.assert_array_equal(ends_o, [99, 199, 299])
    # online window k holds frames k .. k+L-1 of the causal feature stream
    np.testing.assert_array_equal(X[100], Xo[1])
    with pytest.raises(ValueError):
        make_windows(short, "online", 400, 990.0)


# -- model --------------------------------------------------------------------


def test_param_shapes_follow_architecture():
    shapes = param_shapes(NetConfig())
    assert shapes["conv0.W"] == (5, 7, 16)
    assert shapes["conv1.W"] == (5, 16, 32)
    assert shapes["attn.Wq"] == (32, 32)
    assert shapes["ff1.W"] == (32, 64) and shapes["ff2.W"] == (64, 32)
    assert shapes["head_v.W"] == (32, 3) and shapes["head_s.W"] == (32, 3)
    assert not any("pos" in k for k in shapes)  # sinusoidal table is fixed, not learned
    pe = positional_table(10, 32)
    np.testing.assert_allclose(pe[0, 0::2], 0.0)
    np.testing.assert_allclose(pe[0, 1::2], 1.0)


def test_forward_snapshot():
    cfg = NetConfig()
    params = init_params(cfg, 42)
    X = np.random.default_rng(7).normal(size=(1, 20, 7))
    v, s = forward(params, X, cfg)
    np.testing.assert_allclose(v[0, -1], [-1.1137395323524415, -0.20096085050445528, 0.13834604479638746],
                               rtol=1e-10)
    np.testing.assert_allclose(s[0, -1], [0.12314309718850724, -0.05359160606366049, -0.14724969091181586],
                               rtol=1e-10)


@given(st.integers(0, 1000), st.floats(0.1, 100.0))
def test_variance_is_positive_and_forward_is_pure(seed, scale):
    X = scale * np.random.default_rng(seed).normal(size=(2, 8, 7))
    params = init_params(SMALL, seed)
    v1, s1 = forward(params, X, SMALL)
    v2, s2 = forward(params, X.copy(), SMALL)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_array_equal(s1, s2)
    assert np.all(np.exp(s1) > 0)


def test_zero_residual_gives_zero_head_gradient():
    params = init_params(SMALL, 0)
    X = np.random.default_rng(1).normal(size=(3, 8, 7))
    v, _ = forward(params, X, SMALL)
    _, grads = loss_and_grad(params, X, v[:, -1], SMALL, "huber")
    np.testing.assert_array_equal(grads["head_v.W"], 0.0)
    np.testing.assert_array_equal(grads["head_v.b"], 0.0)


def test_duplicated_sample_doubles_summed_gradient():
    params = init_params(SMALL, 0)
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(1, 8, 7)), rng.normal(size=(1, 3))
    vel, log_var, cache = forward(params, X, SMALL, keep_cache=True)
    d = np.zeros_like(vel)
    d[:, -1] = 1.0
    g1 = backward(params, cache, d, d, SMALL)
    X2 = np.concatenate([X, X])
    vel2, _, cache2 = forward(params, X2, SMALL, keep_cache=True)
    d2 = np.zeros_like(vel2)
    d2[:, -1] = 1.0
    g2 = backward(params, cache2, d2, d2, SMALL)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("loss,targets", [("huber", "last"), ("nll", "last"), ("huber", "all"), ("nll", "all")])
def test_gradients_match_finite_differences_small(loss, targets):
    rng = np.random.default_rng(3)
    params = init_params(SMALL, 5)
    for k in params:  # move off the symmetric initialization
        params[k] = params[k] + 0.1 * rng.normal(size=params[k].shape)
    X = rng.normal(size=(2, 6, 7))
    y = 3 * rng.normal(size=(2, 3) if targets == "last" else (2, 6, 3))
    errors = gradient_check(params, X, y, SMALL, loss, targets=targets)
    assert max(errors.values()) < 1e-5, errors


# -- training -----------------------------------------------------------------


def _toy_set(n=200, length=8, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, length, 7))
    y = np.column_stack([X[:, -3:, 0].mean(axis=1), X[:, :, 3].mean(axis=1), X[:, -1, 6]])
    return X, y


def test_training_reduces_loss():
    X, y = _toy_set()
    _, hist = train(X, y, TrainConfig(learning_rate=3e-3, epochs=50, seed=1), SMALL)
    assert hist[-1]["huber"] < 0.1 * hist[0]["huber"]
    assert [h["epoch"] for h in hist] == list(range(1, 51))


def test_single_sample_is_memorized():
    X, y = _toy_set(1)
    X, y = np.repeat(X, 8, axis=0), np.repeat(y, 8, axis=0)
    _, hist = train(X, y, TrainConfig(learning_rate=1e-2, epochs=150, batch_size=8, patience=1000), SMALL)
    assert hist[-1]["huber"] < 1e-4


def test_zero_learning_rate_keeps_loss_constant():
    X, y = _toy_set(64)
    _, hist = train(X, y, TrainConfig(learning_rate=0.0, epochs=5), SMALL)
    assert len({round(h["huber"], 12) for h in hist}) == 1


def test_training_is_deterministic():
    X, y = _toy_set(64)
    cfg = TrainConfig(epochs=4, seed=3)
    _, h1 = train(X, y, cfg, SMALL)
    _, h2 = train(X, y, cfg, SMALL)
    assert h1 == h2


def test_phase_switches_to_nll():
    X, y = _toy_set(64)
    _, hist = train(X, y, TrainConfig(epochs=6, patience=1, min_improvement=10.0), SMALL)
    assert hist[0]["phase"] == "huber" and hist[-1]["phase"] == "nll"


def test_divergence_is_detected():
    X, y = _toy_set(16)
    with np.errstate(all="ignore"), pytest.raises(DivergenceDetected):
        train(X * 1e300, y, TrainConfig(epochs=2, clip_norm=None), SMALL)


def test_train_config_from_mapping():
    cfg = TrainConfig.from_mapping({"learning_rate": "0.01", "epochs": "3", "clip_norm": "none"})
    assert cfg.learning_rate == 0.01 and cfg.epochs == 3 and cfg.clip_norm is None
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"momentum": "0.9"})


# -- serialization and estimator ----------------------------------------------------


def test_serialization_roundtrip_and_errors(tmp_path):
    tensors = {"a": np.arange(6.0).reshape(2, 3), "b": np.array(2.5), "c.d": np.zeros((1, 2, 3))}
    raw = serialization.dumps(tensors)
    assert raw[:4] == b"AIIO"
    back = serialization.loads(raw)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        np.testing.assert_array_equal(back[k], tensors[k])
    with pytest.raises(ParseError):
        serialization.loads(b"XXXX" + raw[4:])
    with pytest.raises(ParseError):
        serialization.loads(raw[:-5])
    with pytest.raises(ParseError):
        serialization.loads(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    path = tmp_path / "p.aiio"
    serialization.save(path, tensors)
    assert path.read_bytes() == raw
    assert not list(tmp_path.glob("*.tmp"))


def test_regressor_fit_predict_save_load(tmp_path):
    X, y = _toy_set(64)
    model = clone(VelocityRegressor(conv_channels=(4, 8), kernel_size=3, n_heads=2, d_ff=8, epochs=3))
    model.fit(X, y)
    v, var = model.predict_with_variance(X[:5])
    assert v.shape == (5, 3) and np.all(var > 0)
    np.testing.assert_array_equal(model.predict(X[:5]), v)
    vall, _ = model.predict_with_variance(X[:2], all_steps=True)
    assert vall.shape == (2, 8, 3)
    path = tmp_path / "net.aiio"
    model.save(path, omega_hover=990.0)
    loaded = VelocityRegressor.load(path)
    np.testing.assert_array_equal(loaded.predict(X[:5]), v)
    assert float(loaded.meta_["omega_hover"]) == 990.0
    model.export_history(tmp_path / "loss.csv")
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,huber,nll" and len(lines) == 4
    assert float(lines[1].split(",")[1]) == model.history_[0]["huber"]


def test_regressor_accepts_offline_targets():
    X, _ = _toy_set(16)
    y = np.random.default_rng(0).normal(size=(16, 8, 3))
    model = VelocityRegressor(conv_channels=(4, 8), kernel_size=3, n_heads=2, d_ff=8, epochs=1).fit(X, y)
    assert model.predict(X).shape == (16, 3)
    with pytest.raises(ValueError):
        model.fit(X, y[:, :4])


def test_rotor_normalizer_matches_window_features(noisy_seq):
    rows = np.hstack([noisy_seq.gyro, noisy_seq.accel, noisy_seq.rotor])
    norm = RotorNormalizer(990.0).fit(rows)
    X, _, ends = make_windows(noisy_seq, "online", 50, 990.0)
    feats = norm.transform(rows)
    np.testing.assert_array_equal(feats[ends[10] - 49:ends[10] + 1], X[10])
    assert RotorNormalizer(990.0, use_rotor=False).fit(rows).transform(rows).shape[1] == 6


def test_net_predictor_drives_filter(noisy_seq):
    model = VelocityRegressor(conv_channels=(4, 8), kernel_size=3, n_heads=2, d_ff=8, epochs=1)
    X, y, _ = make_windows(noisy_seq, "online", 20, 990.0, stride=20)
    model.fit(X, y)
    pred = NetVelocityPredictor(model, 20, RotorNormalizer(990.0))
    res = run_filter(noisy_seq, pred, FilterConfig(init="truth", gate=None))
    assert res.n_updates > 0 and np.all(np.isfinite(res.p))
