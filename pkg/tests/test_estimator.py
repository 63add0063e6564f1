import numpy as np
import pytest

from vqsense import estimator
from vqsense.estimator import EstimatorNet, TrainConfig, init_net
from vqsense.sampling import CorruptFile, MeasurementDataset, ShapeMismatch


def zero_net(n, w, hidden=(4,)):
    dims = [n, *hidden, w]
    weights = [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(b) for b in dims[1:]]
    return EstimatorNet(weights, biases, np.linspace(0, 1, w))


def fixed_net(table):
    """Single-qubit net whose posterior for shot s is row s of ``table``.

    The output bias carries log table[0] and the only weight adds the log ratio
    when the input bit is 1.
    """
    logt = np.log(np.asarray(table, dtype=float))
    w = logt.shape[1]
    return EstimatorNet([(logt[1] - logt[0])[None, :]], [logt[0]], np.arange(w, dtype=float))


def cos2_dataset(shots=4000, n_phi=9, seed=0):
    """One qubit with p(0 | phi) = cos^2(phi / 2) on [0, pi]."""
    phis = np.linspace(0, np.pi, n_phi)
    rng = np.random.default_rng(seed)
    p1 = np.sin(phis / 2) ** 2
    bits = (rng.random((n_phi, shots)) < p1[:, None]).astype(np.uint8)[..., None]
    return MeasurementDataset(1, phis, bits, seed)


# -- forward -----------------------------------------------------------------------


def test_zero_weights_uniform_posterior():
    net = zero_net(3, 5)
    np.testing.assert_allclose(estimator.forward(net, [1, 0, 1]), np.full(5, 0.2), atol=1e-15)


def test_output_is_distribution():
    net = init_net(4, np.linspace(0, 1, 20), seed=1)
    rng = np.random.default_rng(0)
    out = estimator.forward(net, rng.integers(0, 2, (30, 4)))
    assert out.shape == (30, 20)
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)


def test_bad_inputs():
    net = init_net(3, [0.0, 1.0], seed=0)
    with pytest.raises(estimator.BadInput):
        estimator.forward(net, [0, 1])
    with pytest.raises(estimator.BadInput):
        estimator.forward(net, [0, 2, 1])


def test_bins_must_ascend():
    with pytest.raises(ValueError):
        init_net(2, [0.0, 0.0, 1.0])


def test_init_is_seeded():
    a = init_net(4, np.linspace(0, 1, 10), seed=5)
    b = init_net(4, np.linspace(0, 1, 10), seed=5)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    assert a.layer_dims == (4, 64, 64, 10)


# -- backprop ------------------------------------------------------------------------


@pytest.mark.parametrize("l2", [0.0, 1e-2])
def test_backprop_matches_finite_difference(l2):
    rng = np.random.default_rng(2)
    net = init_net(3, np.linspace(0, 1, 6), hidden=(7, 5), seed=3)
    # nonzero biases keep pre-activations off the ReLU kink
    for b in net.biases:
        b += rng.normal(0, 0.5, b.shape)
    x = rng.integers(0, 2, (16, 3)).astype(float)
    y = rng.integers(0, 6, 16)
    _, grads = estimator.loss_and_grads(net, x, y, l2)
    h = 1e-6
    for p, g in zip(net.params(), grads):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = estimator.loss_and_grads(net, x, y, l2)[0]
            p[idx] = old - h
            down = estimator.loss_and_grads(net, x, y, l2)[0]
            p[idx] = old
            fd[idx] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(g - fd) / denom < 1e-4


def test_cross_entropy_of_uniform_output():
    net = zero_net(2, 8)
    loss, _ = estimator.loss_and_grads(net, np.zeros((3, 2)), np.array([0, 3, 7]), 0.0)
    assert loss == pytest.approx(np.log(8), abs=1e-12)


# -- training --------------------------------------------------------------------------


def test_separable_data_learned():
    # outcome 0 only at bin 0, outcome 1 only at bin 1
    bits = np.array([[[0]] * 50, [[1]] * 50], dtype=np.uint8)
    ds = MeasurementDataset(1, [0.0, 1.0], bits, 0)
    net, losses = estimator.train(
        init_net(1, ds.phis, hidden=(8,), seed=0), ds, TrainConfig(epochs=300, batch_size=100, lr=0.05)
    )
    assert losses[-1] < 1e-2
    pred = np.argmax(estimator.forward(net, np.array([[0], [1]])), axis=1)
    np.testing.assert_array_equal(pred, [0, 1])


def test_cos2_fixture_learns_likelihood():
    ds = cos2_dataset()
    net, _ = estimator.train(
        init_net(1, ds.phis, hidden=(8,), seed=1), ds, TrainConfig(epochs=200, batch_size=512, lr=0.01)
    )
    post = estimator.forward(net, [0])
    expected = np.cos(ds.phis / 2) ** 2
    expected /= expected.sum()
    assert np.dot(post, ds.phis) < np.pi / 2
    assert 0.5 * np.abs(post - expected).sum() < 0.05


def test_large_l2_flattens_posterior():
    ds = cos2_dataset(shots=500)
    net, _ = estimator.train(
        init_net(1, ds.phis, hidden=(8,), seed=1), ds,
        TrainConfig(epochs=200, batch_size=512, lr=0.01, l2_coefficient=10.0),
    )
    post = estimator.forward(net, [0])
    assert np.max(np.abs(post - 1 / ds.n_phi)) < 1e-2


def test_running_loss_trends_down():
    ds = cos2_dataset(shots=1000)
    _, losses = estimator.train(
        init_net(1, ds.phis, hidden=(8,), seed=2), ds, TrainConfig(epochs=60, batch_size=256, lr=0.01)
    )
    window = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(window) <= 1e-3)
    assert losses[-1] < losses[0]


def test_training_deterministic():
    ds = cos2_dataset(shots=200)
    cfg = TrainConfig(epochs=5, batch_size=64, seed=9)
    a, la = estimator.train(init_net(1, ds.phis, seed=4), ds, cfg)
    b, lb = estimator.train(init_net(1, ds.phis, seed=4), ds, cfg)
    assert la == lb
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_train_shape_mismatch():
    ds = cos2_dataset(shots=10)
    with pytest.raises(ShapeMismatch):
        estimator.train(init_net(2, ds.phis), ds)
    with pytest.raises(ShapeMismatch):
        estimator.train(init_net(1, np.linspace(0, 1, 4)), ds)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(l2_coefficient=-1.0)


# -- Bayesian combination ----------------------------------------------------------------


def test_bayes_two_identical_shots():
    net = fixed_net([[0.8, 0.2], [0.5, 0.5]])
    post = estimator.bayes_posterior(net, np.zeros((2, 1)))
    np.testing.assert_allclose(post, [0.64 / 0.68, 0.04 / 0.68], atol=1e-12)
    np.testing.assert_allclose(post, [0.941176, 0.0588235], atol=1e-6)


def test_bayes_single_shot_equals_forward():
    net = init_net(3, np.linspace(0, 1, 7), seed=8)
    shot = np.array([[1, 0, 1]])
    np.testing.assert_allclose(estimator.bayes_posterior(net, shot), estimator.forward(net, shot[0]), atol=1e-14)


def test_bayes_permutation_invariant():
    rng = np.random.default_rng(1)
    net = init_net(3, np.linspace(0, 1, 7), seed=8)
    seq = rng.integers(0, 2, (25, 3))
    a = estimator.bayes_posterior(net, seq)
    b = estimator.bayes_posterior(net, seq[rng.permutation(25)])
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_update_posterior_associative():
    rng = np.random.default_rng(6)
    net = init_net(2, np.linspace(0, 1, 5), seed=2)
    seq = rng.integers(0, 2, (12, 2))
    logp = np.full(5, -np.log(5))
    for s in seq:
        logp = estimator.update_posterior(net, logp, s)
    np.testing.assert_allclose(np.exp(logp), estimator.bayes_posterior(net, seq), atol=1e-10)


def test_raw_product_underflows_where_log_space_does_not():
    # factors above 1/2 would stick at the smallest subnormal instead of reaching 0
    net = fixed_net([[0.4, 0.3, 0.3], [0.2, 0.4, 0.4]])
    seq = np.zeros((2000, 1))
    raw = estimator.bayes_posterior(net, seq, log_space=False)
    assert not np.all(np.isfinite(raw))
    good = estimator.bayes_posterior(net, seq)
    np.testing.assert_allclose(good, [1.0, 0.0, 0.0], atol=1e-12)


def test_empty_sequence_rejected():
    with pytest.raises(estimator.BadInput):
        estimator.bayes_posterior(init_net(1, [0.0, 1.0]), np.zeros((0, 1)))


def test_estimate_ties_lowest_index():
    assert estimator.estimate([0.2, 0.4, 0.4], [1.0, 2.0, 3.0]) == 2.0
    assert estimator.estimate([0.25] * 4, [0.1, 0.2, 0.3, 0.4]) == 0.1
    assert estimator.estimate([0.1, 0.7, 0.2], [5.0, 6.0, 7.0]) == 6.0


# -- bias / variance -----------------------------------------------------------------------


def test_delta_posterior_zero_bias_zero_variance():
    # shot 0 pins bin 1 exactly
    table = np.array([[1e-300, 1.0, 1e-300], [1 / 3, 1 / 3, 1 / 3]])
    net = fixed_net(table / table.sum(axis=1, keepdims=True))
    rep = estimator.bias_variance(net, np.zeros((1, 40, 1), dtype=np.uint8), [1.0], [1, 10])
    for r in rep.rows:
        assert r.bias == 0.0 and r.variance < 1e-250 and r.sq_error == 0.0
    assert [r.n_sequences for r in rep.rows] == [40, 4]


def test_cos2_bias_variance_at_m100():
    # softmax over log-likelihood rows is the exact single-shot posterior
    phis = np.linspace(0.05, np.pi - 0.05, 41)
    c2 = np.cos(phis / 2) ** 2
    net = fixed_net([c2, 1 - c2])
    net.phi_bins = phis
    phi_true = phis[[10, 20, 30]]
    rng = np.random.default_rng(3)
    bits = (rng.random((3, 20_000)) < np.sin(phi_true / 2)[:, None] ** 2).astype(np.uint8)[..., None]
    rep = estimator.bias_variance(net, bits, phi_true, [100])
    spacing = phis[1] - phis[0]
    for r in rep.rows:
        # single-qubit CFI is 1, so the CRB at m = 100 is 1e-2
        assert abs(r.bias) < spacing
        assert 0.5e-2 < r.variance < 2e-2
        assert r.n_sequences == 200


def test_report_summary_and_csv(tmp_path):
    rep = estimator.EstimateReport(
        [estimator.EstimateRow(0.1, 10, 0.02, 1e-3, 2e-3, 5), estimator.EstimateRow(0.2, 10, -0.04, 3e-3, 4e-3, 5)]
    )
    s = rep.summary(10)
    assert s["max_abs_bias"] == pytest.approx(0.04)
    assert s["mean_abs_bias"] == pytest.approx(0.03)
    assert s["mean_variance"] == pytest.approx(2e-3)
    with pytest.raises(KeyError):
        rep.summary(100)
    path = tmp_path / "r.csv"
    rep.to_csv(path, extra={"tag": "x"})
    lines = path.read_text().splitlines()
    assert lines[0] == "tag,phi_true,m,bias,variance,sq_error,n_sequences"
    assert lines[1] == "x,0.1,10,0.02,0.001,0.002,5"


def test_too_few_test_shots():
    net = init_net(1, [0.0, 1.0])
    with pytest.raises(ValueError):
        estimator.bias_variance(net, np.zeros((1, 5, 1), dtype=np.uint8), [0.0], [10])


# -- checkpoints -------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    net = init_net(4, np.linspace(0, 0.7, 11), hidden=(6, 5), seed=12)
    net.train_config = {"epochs": 3, "config_hash": "abc"}
    path = tmp_path / "net.vqsn"
    estimator.save_net(net, path)
    back = estimator.load_net(path)
    for p, q in zip(net.params(), back.params()):
        np.testing.assert_array_equal(p, q)
    np.testing.assert_array_equal(back.phi_bins, net.phi_bins)
    assert back.seed == 12 and back.train_config == net.train_config
    assert estimator.to_bytes(back) == path.read_bytes()
    assert path.read_bytes()[:4] == b"VQSN"


def test_checkpoint_corruption_detected():
    blob = bytearray(estimator.to_bytes(init_net(2, [0.0, 0.5, 1.0], hidden=(3,))))
    with pytest.raises(CorruptFile):
        estimator.from_bytes(bytes(blob[:-5]))
    blob[30] ^= 0x10
    with pytest.raises(CorruptFile):
        estimator.from_bytes(bytes(blob))
    with pytest.raises(CorruptFile):
        estimator.from_bytes(b"VQSD" + bytes(20))
