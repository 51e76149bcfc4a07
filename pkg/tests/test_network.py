import numpy as np
import pytest

from sitnn.network import (DEFAULT_DROPOUT_RATE, ForwardContext, LayerSpec,
                           Network, SpikingLayer, build_network,
                           format_architecture, mse_rate_loss,
                           parse_architecture, spiking_dropout_mask,
                           voting_decode)
from sitnn.neurons import NeuronParams, NeuronState, step

TABLE_ARCHITECTURES = [
    # The six reference network rows.
    "c128k3s1-BN-LIF-MPk2s2-c128k3s1-BN-SIT-MPk2s2-DP-FC2048-LIF-DP-FC100-LIF-APk10s10",
    "c128k3s1-BN-LIF-MPk2s2-c128k3s1-BN-SIT-MPk2s2-DP-FC2048-LIF-DP-FC10-LIF",
    "c256k3s1-BN-LIF-c256k3s1-BN-SIT-c256k3s1-BN-LIF-MPk2s2-{c256k3s1-BN-LIF}*3-"
    "MPk2s2-DP-FC2048-LIF-DP-FC100-LIF-APk10s10",
    "c128k3s1-BN-LIF-MPk2s2-c128k3s1-BN-SIT-MPk2s2-DP-FC2048-LIF-DP-FC100-LIF-APk10s10",
    "c128k3s1-BN-LIF-MPk2s2-c128k3s1-BN-SIT-MPk2s2-{c128k3s1-BN-LIF-MPk2s2}*2-"
    "DP-FC512-LIF-DP-FC100-LIF-APk10s10",
    "{c128k3s1-BN-LIF-MPk2s2}*2-c128k3s1-BN-SIT-MPk2s2-{c128k3s1-BN-LIF-MPk2s2}*2-"
    "DP-FC512-LIF-DP-FC110-LIF-APk10s10",
]


def test_parse_basic_row():
    specs = parse_architecture("c128k3s1-BN-LIF-MPk2s2")
    assert [s.kind for s in specs] == ["conv", "batch_norm", "spiking", "max_pool"]
    assert specs[0] == LayerSpec(kind="conv", out_channels=128, kernel=3, stride=1)
    assert specs[2].neuron == "lif"
    assert specs[3] == LayerSpec(kind="max_pool", kernel=2, stride=2)


def test_parse_repeat_expansion():
    once = parse_architecture("c128k3s1-BN-LIF-MPk2s2")
    twice = parse_architecture("{c128k3s1-BN-LIF-MPk2s2}*2")
    assert twice == once + once


def test_parse_empty():
    assert parse_architecture("") == []


def test_parse_errors_carry_position():
    with pytest.raises(ValueError, match="position 9"):
        parse_architecture("c16k3s1-B-LIF")
    with pytest.raises(ValueError, match="repeat"):
        parse_architecture("{BN-LIF}x2")
    with pytest.raises(ValueError, match=">= 1"):
        parse_architecture("c0k3s1")
    with pytest.raises(ValueError, match="unclosed"):
        parse_architecture("{BN-LIF*2")


@pytest.mark.parametrize("text", TABLE_ARCHITECTURES)
def test_round_trip_is_identity(text):
    specs = parse_architecture(text)
    assert parse_architecture(format_architecture(specs)) == specs


def test_single_lif_layer_fires_on_strong_constant_input():
    net = build_network(parse_architecture("LIF"), (4,), dtype=np.float64)
    frames = np.full((3, 2, 4), 2.0)
    spikes = net.forward_sequence(frames)
    assert spikes.shape == (3, 2, 4)
    assert (spikes == 1.0).all()


def test_zero_conv_weights_give_zero_spikes():
    net = build_network(parse_architecture("c4k3s1-LIF"), (1, 6, 6),
                        rng=np.random.default_rng(0))
    net.set_parameters({"layer0.conv.weight": np.zeros((4, 1, 3, 3)),
                        "layer0.conv.bias": np.zeros(4)})
    frames = np.random.default_rng(1).random((4, 2, 1, 6, 6)).astype(np.float32)
    spikes = net.forward_sequence(frames)
    assert not spikes.any()


@pytest.mark.parametrize("neuron,params", [
    ("SIT", NeuronParams.sit(tau=2.0)),
    ("SITB", NeuronParams.sit_bursting(tau=2.0)),
    ("LIF", NeuronParams.lif(tau=2.0)),
    ("IZH", NeuronParams.izhikevich_tonic(tau=2.0)),
])
def test_vectorized_layer_matches_scalar_stepper(neuron, params):
    # The layer math is an independent implementation of the scalar
    # steppers; in float64 the two must agree exactly.
    rng = np.random.default_rng(5)
    currents = rng.uniform(-1.0, 4.0, size=(40, 3))
    if neuron == "IZH":
        currents = currents * 40.0
    net = build_network(parse_architecture(neuron), (3,), dtype=np.float64)
    spikes = net.forward_sequence(currents[:, None, :])[:, 0, :]

    for j in range(3):
        state = NeuronState(params.u_reset, 0.0)
        for t in range(40):
            tr = step(params, state, float(currents[t, j]))
            assert spikes[t, j] == tr.s, (neuron, t, j)
            state = tr.state


def test_sit_layer_equals_constant_input_simulation():
    from sitnn.neurons import simulate_constant_input
    net = build_network(parse_architecture("SIT"), (5,), dtype=np.float64)
    frames = np.full((100, 1, 5), 2.0)
    spikes = net.forward_sequence(frames)
    reference = simulate_constant_input(NeuronParams.sit(tau=2.0), 2.0, 100)
    for j in range(5):
        assert np.array_equal(spikes[:, 0, j], reference.s.astype(float))


def test_max_pool_takes_max_and_first_index_ties():
    net = build_network(parse_architecture("MPk2s2"), (1, 2, 2))
    frames = np.zeros((1, 1, 1, 2, 2), dtype=np.float32)
    frames[0, 0, 0] = [[0.0, 1.0], [1.0, 0.0]]
    out = net.forward_sequence(frames)
    assert out.shape == (1, 1, 1, 1, 1)
    assert out[0, 0, 0, 0, 0] == 1.0
    # Tie: gradient must route to the first window position (row-major).
    _, layer = net.layers[0]
    gy = np.ones_like(out)
    gx = layer.backward(gy)
    assert gx[0, 0, 0, 0, 1] == 1.0
    assert gx[0, 0, 0, 1, 0] == 0.0


def test_dropout_mask_contract():
    assert (spiking_dropout_mask(0.0, (100,), 1) == 1.0).all()
    mask = spiking_dropout_mask(0.5, (1_000_000,), 2)
    kept = (mask > 0).mean()
    assert kept == pytest.approx(0.5, abs=0.01)
    assert np.array_equal(spiking_dropout_mask(0.5, (999,), 3),
                          spiking_dropout_mask(0.5, (999,), 3))
    with pytest.raises(ValueError):
        spiking_dropout_mask(1.0, (4,), 0)


def test_dropout_layer_constant_across_time_and_identity_at_eval():
    net = build_network(parse_architecture("DP"), (50,))
    frames = np.ones((6, 3, 50), dtype=np.float32)
    out = net.forward_sequence(frames, training=True,
                               rng=np.random.default_rng(0))
    for t in range(1, 6):
        assert np.array_equal(out[t], out[0])
    scale = 1.0 / (1.0 - DEFAULT_DROPOUT_RATE)
    assert set(np.unique(out)) <= {0.0, np.float32(scale)}
    assert np.array_equal(net.forward_sequence(frames, training=False), frames)


def test_voting_decode_examples():
    spikes = np.zeros((4, 1, 100), dtype=np.float32)
    spikes[:, 0, :10] = 1.0
    scores = voting_decode(spikes, 10, 10)
    assert scores.shape == (1, 10)
    assert scores[0, 0] == 1.0 and (scores[0, 1:] == 0.0).all()

    uniform = np.ones((4, 2, 100), dtype=np.float32)
    scores = voting_decode(uniform, 10, 10)
    assert (scores == 1.0).all()
    assert np.argmax(scores, axis=1).tolist() == [0, 0]

    eleven = voting_decode(np.ones((2, 1, 110), dtype=np.float32), 10, 10)
    assert eleven.shape == (1, 11)
    with pytest.raises(ValueError, match="divisible"):
        voting_decode(np.ones((2, 1, 105), dtype=np.float32), 10, 10)


def test_mse_rate_loss_values():
    spikes = np.zeros((5, 1, 10), dtype=np.float64)
    spikes[:, 0, 3] = 1.0
    loss, grad = mse_rate_loss(spikes, np.array([3]), pool=1)
    assert loss == 0.0
    assert grad.shape == spikes.shape

    uniform = np.full((10, 1, 10), 0.1)
    loss, _ = mse_rate_loss(uniform, np.array([0]), pool=1)
    assert loss == pytest.approx(0.09)

    doubled = np.full((20, 1, 10), 0.1)
    loss2, _ = mse_rate_loss(doubled, np.array([0]), pool=1)
    assert loss2 == pytest.approx(loss)


def test_mse_rate_loss_zero_upstream_gradient():
    rng = np.random.default_rng(0)
    net = build_network(parse_architecture("FC8-SIT-FC10"), (6,),
                        dtype=np.float64, rng=rng)
    frames = rng.random((4, 2, 6))
    spikes = net.forward_sequence(frames)
    grads = net.backward(np.zeros_like(spikes))
    assert all((g == 0).all() for g in grads.values())


def test_single_step_fc_lif_closed_form_gradient():
    # T=1, one FC weight row into one LIF neuron, loss = sum of spikes: the
    # weight gradient is slope(y - threshold) * (1/tau) * x.
    rng = np.random.default_rng(7)
    net = build_network(parse_architecture("FC1-LIF"), (4,), dtype=np.float64,
                        rng=rng)
    x = rng.random((1, 1, 4))
    spikes = net.forward_sequence(x, relaxed=True)
    grads = net.backward(np.ones_like(spikes))
    w = net.parameters()["layer0.fully_connected.weight"]
    b = net.parameters()["layer0.fully_connected.bias"]
    tau, threshold = 2.0, 1.0
    current = float(x[0, 0] @ w[0] + b[0])
    y = current / tau
    slope = 1.0 / (1.0 + (np.pi * (y - threshold)) ** 2)
    expected = slope * (1.0 / tau) * x[0, 0]
    assert np.allclose(grads["layer0.fully_connected.weight"][0], expected,
                       rtol=1e-12)
    assert grads["layer0.fully_connected.bias"][0] == pytest.approx(
        slope / tau, rel=1e-12)


def fd_check(arch, shape, seed, dropout=False, timesteps=4, samples=8):
    from sitnn.training import gradient_check
    return gradient_check(arch, shape, samples=samples, timesteps=timesteps,
                          coords=120, seed=seed, use_dropout_mask=dropout)


@pytest.mark.parametrize("arch,shape", [
    ("FC10-SIT-FC6", (7,)),
    ("FC10-LIF-DP-FC6", (7,)),
    ("c3k3s1-BN-SIT-MPk2s2-FC5", (1, 6, 6)),
    ("c3k3s1-LIF-c2k3s1-SITB-FC5", (1, 5, 5)),
    ("FC10-IZH-FC6", (7,)),
])
def test_bptt_matches_finite_differences(arch, shape):
    assert fd_check(arch, shape, seed=11) < 1e-4


def test_bptt_matches_finite_differences_with_dropout_mask():
    assert fd_check("FC10-SIT-DP-FC6", (7,), seed=3, dropout=True) < 1e-4


def test_forward_and_gradients_deterministic():
    def run():
        rng = np.random.default_rng(21)
        net = build_network(parse_architecture("c4k3s1-BN-SIT-MPk2s2-FC10"),
                            (1, 8, 8), rng=rng)
        frames = np.random.default_rng(1).random((4, 3, 1, 8, 8)).astype(np.float32)
        spikes = net.forward_sequence(frames, training=True,
                                      rng=np.random.default_rng(2))
        loss, grad = mse_rate_loss(spikes, np.array([0, 1, 2]), pool=1)
        return spikes, net.backward(grad)

    s1, g1 = run()
    s2, g2 = run()
    assert np.array_equal(s1, s2)
    for key in g1:
        assert np.array_equal(g1[key], g2[key])


def test_state_hygiene_repeated_forward_identical():
    rng = np.random.default_rng(9)
    net = build_network(parse_architecture("c4k3s1-BN-SIT-FC10"), (1, 6, 6),
                        rng=rng)
    frames = np.random.default_rng(4).random((5, 2, 1, 6, 6)).astype(np.float32)
    first = net.forward_sequence(frames)
    second = net.forward_sequence(frames)
    assert np.array_equal(first, second)


def test_forward_rejects_shape_mismatch_with_layer_index():
    net = build_network(parse_architecture("c4k3s1-LIF-FC10"), (1, 6, 6))
    with pytest.raises(ValueError, match="expected input shape"):
        net.forward_sequence(np.zeros((2, 2, 1, 5, 5), dtype=np.float32))
    net2 = build_network(parse_architecture("FC4"), (8,))
    with pytest.raises(ValueError, match="layer 0"):
        bad = np.zeros((2, 2, 8), dtype=np.float32)
        net2.layers[0][1].in_features = 9
        net2.forward_sequence(bad)


def test_network_is_hybrid_flag():
    hybrid = build_network(parse_architecture("FC4-LIF-FC4-SIT"), (4,))
    assert hybrid.is_hybrid
    plain = build_network(parse_architecture("FC4-LIF-FC4-LIF"), (4,))
    assert not plain.is_hybrid


def test_voting_must_be_last_and_divide():
    with pytest.raises(ValueError, match="final layer"):
        build_network(parse_architecture("FC100-APk10s10-LIF"), (4,))
    with pytest.raises(ValueError, match="divide"):
        build_network(parse_architecture("FC105-LIF-APk10s10"), (4,))
    net = build_network(parse_architecture("FC100-LIF-APk10s10"), (4,))
    assert net.voting == (10, 10)
    assert net.num_classes == 10
