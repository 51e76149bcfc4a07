import io
import math

import numpy as np
import pytest

from sitnn.neurons import (NeuronParams, NeuronState, izhikevich_vanilla_step,
                           lif_step, qif_step, read_spike_train_csv,
                           simulate_constant_input, sit_step, step, surrogate,
                           write_spike_train_csv)


def test_sit_defaults_match_builtin_table():
    p = NeuronParams.sit()
    assert (p.a, p.b, p.c, p.d, p.k, p.u_c, p.u_r) == (
        0.002, 0.02, 0.0, 0.2, 1.0, 1.0, -0.05)
    assert p.u_threshold == 1.0 and p.u_reset == 0.0
    b = NeuronParams.sit_bursting()
    assert (b.a, b.b, b.c, b.d, b.k, b.u_c, b.u_r) == (
        0.35, 0.6, 0.0, 0.5, 1.0, 1.0, -0.05)


def test_param_validation():
    with pytest.raises(ValueError):
        NeuronParams(family="lif", tau=0.0)
    with pytest.raises(ValueError):
        NeuronParams(family="sit", a=0.0, b=0.02, k=1.0)
    with pytest.raises(ValueError):
        NeuronParams(family="nope")


def test_sit_step_from_rest():
    # Hand-evaluated charge: y = 0 + (1/2)(0.05)(-1) + 2/2 = 0.975
    p = NeuronParams.sit(tau=2.0)
    tr = sit_step(p, NeuronState(0.0, 0.0), 2.0)
    assert tr.y == pytest.approx(0.975, abs=1e-12)
    assert tr.s == 0
    assert tr.u_post == pytest.approx(0.975, abs=1e-12)
    assert tr.v_post == pytest.approx(2.05e-5, rel=1e-12)


def test_sit_step_fires_and_resets():
    p = NeuronParams.sit(tau=2.0)
    tr = sit_step(p, NeuronState(0.975, 2.05e-5), 2.0)
    assert tr.y == pytest.approx(1.96217725, abs=1e-9)
    assert tr.s == 1
    assert tr.u_post == 0.0
    assert tr.v_post == pytest.approx(0.2000214795, abs=1e-10)


def test_sit_stable_point_is_stationary():
    p = NeuronParams.sit(tau=2.0)
    tr = sit_step(p, NeuronState(-0.05, 0.0), 0.0)
    assert tr.y == pytest.approx(-0.05, abs=1e-15)
    assert tr.s == 0
    assert tr.v_post == pytest.approx(0.0, abs=1e-15)


def test_sit_reset_identity():
    # On spiking steps u_post equals c exactly and the recovery increment
    # is exactly d: v_post is bitwise h + d.
    p = NeuronParams.sit(tau=2.0)
    rng = np.random.default_rng(3)
    fired = 0
    state = NeuronState(0.0, 0.0)
    for _ in range(500):
        tr = sit_step(p, state, float(rng.uniform(1.0, 4.0)))
        if tr.s:
            fired += 1
            assert tr.u_post == p.c
            assert tr.v_post == tr.h + p.d
        state = tr.state
    assert fired > 10


def test_sit_rejects_non_finite():
    p = NeuronParams.sit()
    with pytest.raises(ValueError, match="non-finite"):
        sit_step(p, NeuronState(math.nan, 0.0), 1.0)
    with pytest.raises(ValueError, match="non-finite"):
        sit_step(p, NeuronState(0.0, 0.0), math.inf)


def test_lif_step_values():
    p = NeuronParams.lif(tau=2.0)
    tr = lif_step(p, 0.0, 2.0)
    assert tr.y == 1.0 and tr.s == 1 and tr.u_post == 0.0
    tr = lif_step(p, 0.0, 0.0)
    assert tr.y == 0.0 and tr.s == 0
    tr = lif_step(p, 0.5, 1.0)
    assert tr.y == pytest.approx(0.75) and tr.s == 0


def test_qif_step_values():
    p = NeuronParams.qif(tau=2.0, k=1.0, u_r=0.0, u_c=1.0)
    assert qif_step(p, 0.5, 0.0).y == pytest.approx(0.375)
    # Both quadratic roots are stationary under zero input.
    assert qif_step(p, 0.0, 0.0).y == 0.0
    assert qif_step(p, 1.0, 0.0).y == 1.0


def test_vanilla_tonic_stationary_points():
    p = NeuronParams.izhikevich_tonic(tau=1.0)
    tr = izhikevich_vanilla_step(p, NeuronState(-70.0, -14.0), 0.0)
    assert tr.u_post == pytest.approx(-70.0, abs=1e-9)
    assert tr.v_post == pytest.approx(-14.0, abs=1e-9)
    tr = izhikevich_vanilla_step(p, NeuronState(-50.0, -10.0), 0.0)
    assert tr.u_post == pytest.approx(-50.0, abs=1e-9)
    assert tr.v_post == pytest.approx(-10.0, abs=1e-9)


@pytest.mark.parametrize("current", [-5.0, 0.0, 40.0])
def test_vanilla_above_threshold_resets(current):
    p = NeuronParams.izhikevich_tonic(tau=1.0)
    tr = izhikevich_vanilla_step(p, NeuronState(31.0, 0.0), current)
    assert tr.s == 1
    assert tr.u_post == -65.0
    assert tr.v_post == 8.0


def test_vanilla_uncorrected_form_moves_rest_state():
    p = NeuronParams.izhikevich_tonic(tau=1.0)
    tr = izhikevich_vanilla_step(p, NeuronState(-70.0, -14.0), 0.0,
                                 corrected_quadratic=False)
    assert abs(tr.u_post - (-70.0)) > 1.0


def test_surrogate_values():
    value, deriv = surrogate(0.0)
    assert value == pytest.approx(0.5)
    assert deriv == pytest.approx(1.0)
    value, deriv = surrogate(1e6)
    assert value == pytest.approx(1.0, abs=1e-5)
    assert deriv == pytest.approx(0.0, abs=1e-5)


def test_surrogate_derivative_matches_finite_difference():
    h = 1e-6
    for x in np.linspace(-5.0, 5.0, 201):
        _, deriv = surrogate(float(x))
        fd = (surrogate(float(x) + h)[0] - surrogate(float(x) - h)[0]) / (2 * h)
        assert deriv == pytest.approx(fd, abs=1e-6)
    assert 0.0 < surrogate(5.0)[1] <= 1.0


def test_lif_fires_every_step_at_or_above_tau():
    # Constant input >= tau drives the membrane to threshold each step.
    tau = 2.0
    p = NeuronParams.lif(tau=tau)
    for current in (tau, tau + 0.5, 2 * tau, 10 * tau):
        train = simulate_constant_input(p, current, 100)
        assert train.s[1:].all()
        assert train.s.all()


def test_lif_identical_trains_for_2_and_3():
    p = NeuronParams.lif(tau=2.0)
    a = simulate_constant_input(p, 2.0, 10)
    b = simulate_constant_input(p, 3.0, 10)
    assert a.s.all() and b.s.all()
    assert np.array_equal(a.s, b.s)


def test_sit_distinguishes_inputs_lif_cannot():
    p = NeuronParams.sit(tau=2.0)
    a = simulate_constant_input(p, 2.0, 100)
    b = simulate_constant_input(p, 3.0, 100)
    assert a.spike_count != b.spike_count


@pytest.mark.parametrize("family", ["lif", "qif", "sit", "izh"])
def test_zero_input_from_rest_never_spikes(family):
    params = {
        "lif": NeuronParams.lif(),
        "qif": NeuronParams.qif(),
        "sit": NeuronParams.sit(),
        "izh": NeuronParams.izhikevich_tonic(),
    }[family]
    assert simulate_constant_input(params, 0.0, 10).spike_count == 0


@pytest.mark.parametrize("current", [1.5, 2.0, 2.5, 3.0])
def test_sit_spike_frequency_adaptation(current):
    # Inter-spike intervals lengthen (never shorten) under constant drive.
    train = simulate_constant_input(NeuronParams.sit(tau=2.0), current, 300)
    isis = train.isis
    assert isis.size >= 2
    assert (np.diff(isis) >= 0).all()


def test_sit_bursting_fires_in_groups():
    train = simulate_constant_input(NeuronParams.sit_bursting(tau=2.0), 2.0, 300)
    isis = train.isis
    assert isis.size >= 3
    assert isis.max() >= 2 * isis.min()


def test_simulate_validates_steps():
    with pytest.raises(ValueError):
        simulate_constant_input(NeuronParams.lif(), 1.0, 0)


def test_step_dispatch_matches_family_steppers():
    state = NeuronState(0.2, 0.01)
    p = NeuronParams.sit()
    assert step(p, state, 1.0) == sit_step(p, state, 1.0)
    p = NeuronParams.lif()
    assert step(p, state, 1.0) == lif_step(p, state.u, 1.0)


def test_spike_train_csv_round_trip():
    train = simulate_constant_input(NeuronParams.sit(tau=2.0), 2.0, 50)
    buf = io.StringIO()
    write_spike_train_csv(train, buf, header_lines=["provenance test"])
    text = buf.getvalue()
    assert text.startswith("# provenance test\n")
    assert text.splitlines()[1] == "step,y,u_post,v_post,s"
    back = read_spike_train_csv(text.splitlines())
    assert np.array_equal(back.s, train.s)
    assert np.allclose(back.y, train.y, rtol=0, atol=0)
    assert np.allclose(back.v_post, train.v_post, rtol=0, atol=0)
