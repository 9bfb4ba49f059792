import numpy as np
import pytest

from cfmimo.association import select_masters
from cfmimo.config import ExperimentConfig
from cfmimo.errors import CheckpointError
from cfmimo.model import (
    AdamState,
    ModelParams,
    adam_step,
    build_inputs,
    init_params,
    load_checkpoint,
    lstm_step,
    model_backward,
    model_forward,
    order_chain,
    save_checkpoint,
)

CFG = ExperimentConfig()


def zero_params(q=4, d=5, widths=(6, 3)):
    p = init_params(q, d, widths, np.random.default_rng(0))
    for a in p.arrays():
        a[:] = 0.0
    return p


def rand_params(q=4, d=5, widths=(6, 3), seed=0):
    return init_params(q, d, widths, np.random.default_rng(seed))


def rand_chain(n_ues, n_aps, seed=0):
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.1, 2.0, (n_ues, n_aps))
    inputs = np.concatenate(
        [(10 * np.log10(gains) + 110) / 40, rng.uniform(0, 1, (n_ues, 2))], axis=1
    )
    return gains, inputs, order_chain(gains, select_masters(gains))


# -- cell equations ----------------------------------------------------------


def test_lstm_step_zero_params_zero_state():
    p = zero_params()
    h, c = lstm_step(p, np.ones(5), np.zeros(4), np.zeros(4))
    assert np.allclose(h, 0.0) and np.allclose(c, 0.0)


def test_lstm_step_zero_params_carries_half_cell():
    p = zero_params()
    v = np.array([0.5, -1.0, 2.0, 0.1])
    h, c = lstm_step(p, np.zeros(5), np.zeros(4), v)
    assert np.allclose(c, 0.5 * v)
    assert np.allclose(h, 0.5 * np.tanh(0.5 * v))


def test_lstm_step_outputs_bounded():
    p = rand_params(seed=5)
    rng = np.random.default_rng(1)
    h, c = lstm_step(p, rng.normal(size=5) * 10, rng.normal(size=4), rng.normal(size=4))
    assert np.all(np.abs(h) < 1.0)


# -- chain ordering ----------------------------------------------------------


def test_order_chain_two_level_example():
    # masters: UE0 -> AP1 (0.4), UE1 -> AP4, UE2 -> AP1 (0.9); 0-based ids
    gains = np.zeros((3, 5))
    gains[0, 1] = 0.4
    gains[1, 4] = 0.7
    gains[2, 1] = 0.9
    chain = order_chain(gains, select_masters(gains))
    assert chain.order.tolist() == [2, 0, 1]  # AP1's UEs by falling gain, then AP4's


def test_order_chain_single_ue_and_ties():
    gains = np.array([[0.3, 0.1]])
    assert order_chain(gains, select_masters(gains)).order.tolist() == [0]
    tied = np.array([[0.5, 0.1], [0.5, 0.1], [0.5, 0.1]])
    chain = order_chain(tied, select_masters(tied))
    assert chain.order.tolist() == [0, 1, 2]  # equal gains: ascending UE index


def test_order_chain_permutation_stable_under_relabeling():
    gains, _, chain = rand_chain(6, 4, seed=3)
    perm = np.random.default_rng(4).permutation(6)
    relabeled = gains[perm]
    chain2 = order_chain(relabeled, select_masters(relabeled))
    # mapping back through the relabeling yields the same UE sequence
    assert perm[chain2.order].tolist() == chain.order.tolist()


# -- inputs ------------------------------------------------------------------


def test_input_layout_and_widths():
    rng = np.random.default_rng(0)
    gains = rng.uniform(1e-12, 1e-8, (10, 25))
    xy = rng.uniform(0, 700, (10, 2))
    x = build_inputs(gains, xy, CFG)
    assert x.shape == (10, 27)
    pilots = rng.integers(0, 4, 10)
    xp = build_inputs(gains, xy, CFG, pilot_of=pilots, num_pilots=4)
    assert xp.shape == (10, 31)
    onehot = xp[:, 27:]
    assert np.all(onehot.sum(axis=1) == 1.0)
    assert np.all(onehot[np.arange(10), pilots] == 1.0)


def test_center_ue_position_features():
    gains = np.full((1, 25), 1e-9)
    xy = np.array([[350.0, 350.0]])
    x = build_inputs(gains, xy, CFG)
    assert np.allclose(x[0, 25:], [0.5, 0.5])


# -- forward pass ------------------------------------------------------------


def test_forward_zero_params_gives_half_probs():
    p = zero_params(q=4, d=5, widths=(6, 3))
    _, inputs, chain = rand_chain(3, 3)
    trace = model_forward(p, inputs, chain)
    assert np.allclose(trace.probs, 0.5)


def test_forward_single_ue_symmetric_directions():
    # identical forward/backward weights: the lone position sees z = 2 h
    p = rand_params(q=6, d=5, widths=(4, 3), seed=2)
    p.bwd_w[:] = p.fwd_w
    p.bwd_u[:] = p.fwd_u
    p.bwd_b[:] = p.fwd_b
    _, inputs, chain = rand_chain(1, 3, seed=1)
    trace = model_forward(p, inputs, chain)
    assert np.allclose(trace.agg, 2.0 * trace.fwd_cache[3])


def test_forward_outputs_open_interval():
    p = rand_params(q=8, d=5, widths=(8, 3), seed=4)
    _, inputs, chain = rand_chain(5, 3, seed=5)
    probs = model_forward(p, inputs, chain).probs
    assert np.all(probs > 0.0) and np.all(probs < 1.0)


def test_reversed_chain_with_swapped_directions_matches():
    p = rand_params(q=5, d=6, widths=(7, 4), seed=6)
    swapped = ModelParams(
        fwd_w=p.bwd_w.copy(), fwd_u=p.bwd_u.copy(), fwd_b=p.bwd_b.copy(),
        bwd_w=p.fwd_w.copy(), bwd_u=p.fwd_u.copy(), bwd_b=p.fwd_b.copy(),
        fc=[(w.copy(), b.copy()) for w, b in p.fc],
    )
    gains, inputs, chain = rand_chain(4, 4, seed=7)
    from cfmimo.model import ChainOrder

    reversed_chain = ChainOrder(
        order=chain.order[::-1].copy(), masters_in_order=chain.masters_in_order[::-1].copy()
    )
    probs_a = model_forward(p, inputs, chain).probs
    probs_b = model_forward(swapped, inputs, reversed_chain).probs
    assert np.allclose(probs_a, probs_b, atol=1e-12)


def test_same_params_handle_any_chain_length():
    p = rand_params(q=5, d=6, widths=(7, 4), seed=8)
    _, inputs4, chain4 = rand_chain(4, 4, seed=9)
    _, inputs5, chain5 = rand_chain(5, 4, seed=10)
    out4 = model_forward(p, inputs4, chain4).probs
    out5 = model_forward(p, inputs5, chain5).probs
    assert out4.shape == (4, 4) and out5.shape == (5, 4)


# -- backward pass -----------------------------------------------------------


def test_bptt_matches_finite_differences():
    q, n_aps, n_ues = 4, 3, 3
    p = rand_params(q=q, d=n_aps + 2, widths=(6, n_aps), seed=11)
    _, inputs, chain = rand_chain(n_ues, n_aps, seed=12)
    rng = np.random.default_rng(13)
    coupling = rng.normal(size=(n_ues, n_aps))
    trace = model_forward(p, inputs, chain)
    grads = model_backward(p, trace, coupling)

    def loss():
        return float((model_forward(p, inputs, chain).probs * coupling).sum())

    arrays = p.arrays()
    eps = 1e-5
    worst = 0.0
    for _ in range(200):
        ai = rng.integers(len(arrays))
        arr = arrays[ai]
        idx = tuple(rng.integers(s) for s in arr.shape)
        orig = arr[idx]
        arr[idx] = orig + eps
        hi = loss()
        arr[idx] = orig - eps
        lo = loss()
        arr[idx] = orig
        fd = (hi - lo) / (2 * eps)
        worst = max(worst, abs(fd - grads[ai][idx]) / max(abs(fd) + abs(grads[ai][idx]), 1e-6))
    assert worst <= 1e-4


def test_zero_output_gradient_gives_zero_param_gradient():
    p = rand_params(q=4, d=5, widths=(6, 3), seed=14)
    _, inputs, chain = rand_chain(3, 3, seed=15)
    trace = model_forward(p, inputs, chain)
    grads = model_backward(p, trace, np.zeros((3, 3)))
    assert all(np.all(g == 0.0) for g in grads)


def test_backward_lstm_grads_ignore_forward_perturbation_at_fixed_trace():
    p = rand_params(q=4, d=5, widths=(6, 3), seed=16)
    _, inputs, chain = rand_chain(3, 3, seed=17)
    coupling = np.random.default_rng(18).normal(size=(3, 3))
    trace = model_forward(p, inputs, chain)
    grads = model_backward(p, trace, coupling)
    perturbed = p.copy()
    perturbed.fwd_w += 0.37
    perturbed.fwd_u += 0.11
    grads2 = model_backward(perturbed, trace, coupling)
    # arrays 3..5 belong to the reversed-direction cell
    for i in (3, 4, 5):
        assert np.array_equal(grads[i], grads2[i])


def test_backward_shape_mismatch_rejected():
    p = rand_params(q=4, d=5, widths=(6, 3), seed=19)
    _, inputs, chain = rand_chain(3, 3, seed=20)
    trace = model_forward(p, inputs, chain)
    with pytest.raises(ValueError, match="shape"):
        model_backward(p, trace, np.zeros((2, 3)))


# -- optimizer ---------------------------------------------------------------


def test_adam_first_step_magnitude_and_zero_grad():
    p = rand_params(seed=21)
    before = [a.copy() for a in p.arrays()]
    state = AdamState.zeros_like(p)
    grads = [np.full_like(a, 0.3) for a in p.arrays()]
    adam_step(p, grads, state, lr=1e-5)
    for a, b in zip(p.arrays(), before):
        step = a - b
        assert np.allclose(np.abs(step), 1e-5, rtol=1e-6)
        assert np.all(step > 0)  # ascent along a positive gradient
    # zero gradient from a fresh state: no movement
    fresh = rand_params(seed=21)
    snapshot = [a.copy() for a in fresh.arrays()]
    adam_step(fresh, [np.zeros_like(a) for a in fresh.arrays()],
              AdamState.zeros_like(fresh), lr=1e-5)
    for a, b in zip(fresh.arrays(), snapshot):
        assert np.array_equal(a, b)


def test_adam_deterministic_across_runs():
    def run():
        p = rand_params(seed=22)
        state = AdamState.zeros_like(p)
        rng = np.random.default_rng(23)
        for _ in range(5):
            grads = [rng.normal(size=a.shape) for a in p.arrays()]
            adam_step(p, grads, state, lr=1e-3)
        return p

    p1, p2 = run(), run()
    assert all(np.array_equal(a, b) for a, b in zip(p1.arrays(), p2.arrays()))


# -- parameter counts / checkpoints ------------------------------------------


def test_param_count_formula():
    q, d, widths = 512, 27, (256, 128, 25)
    p = init_params(q, d, widths, np.random.default_rng(0))
    lstm = 4 * q * d + 4 * q * q + 4 * q
    fc = q * 256 + 256 + 256 * 128 + 128 + 128 * 25 + 25
    assert p.num_params() == 2 * lstm + fc


def test_compressed_variant_constructible():
    p = init_params(256, 11, (128, 64, 9), np.random.default_rng(0))
    assert p.hidden_size == 256 and p.output_size == 9


def test_checkpoint_round_trip_bit_exact(tmp_path):
    p = rand_params(q=6, d=8, widths=(10, 4), seed=24)
    f1, f2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p, f1, pilot_inputs=True)
    loaded, pilot_inputs = load_checkpoint(f1)
    assert pilot_inputs is True
    save_checkpoint(loaded, f2, pilot_inputs=True)
    assert f1.read_bytes() == f2.read_bytes()
    for a, b in zip(p.arrays(), loaded.arrays()):
        assert np.array_equal(a, b)


def test_checkpoint_corruption_detected(tmp_path):
    p = rand_params(q=4, d=5, widths=(6, 3), seed=25)
    path = tmp_path / "c.ckpt"
    save_checkpoint(p, path)
    blob = bytearray(path.read_bytes())
    blob[100] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="offset"):
        load_checkpoint(bad)
    truncated = tmp_path / "trunc.ckpt"
    truncated.write_bytes(path.read_bytes()[:40])
    with pytest.raises(CheckpointError):
        load_checkpoint(truncated)
    not_magic = tmp_path / "junk.ckpt"
    not_magic.write_bytes(b"garbage!" + path.read_bytes()[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(not_magic)
