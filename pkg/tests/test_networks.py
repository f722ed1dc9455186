import numpy as np
import pytest
import torch

from hwgail.networks import (
    NetworkSpec,
    ParameterSet,
    actor_batch,
    actor_forward,
    actor_spec,
    critic_forward,
    critic_spec,
    discriminator_forward,
    discriminator_logits,
    discriminator_spec,
    init_params,
    load_params,
    loss_gradients,
    save_params,
    zero_params,
)
from hwgail.trajectory import make_state
from oracles import central_differences, naive_forward, sigmoid

T = 50


def random_state(rng, horizon=T):
    return make_state(rng.uniform(size=(int(rng.integers(1, horizon + 1)), 2)), horizon)


def perturbed(params, rng, scale=0.05):
    """Random parameters with nonzero biases so every term is exercised."""
    return params.map(lambda t: t + torch.from_numpy(rng.normal(0, scale, size=t.shape)))


def test_shapes_match_architecture():
    p = init_params(actor_spec(T), 0)
    assert tuple(p["conv1.weight"].shape) == (128, 3, 7)
    assert tuple(p["conv2.weight"].shape) == (64, 128, 7)
    assert tuple(p["dense.weight"].shape) == (2, 64 * T)
    assert tuple(init_params(critic_spec(T), 0)["dense.weight"].shape) == (1, 64 * T)


def test_init_deterministic_and_seeded():
    a, b = init_params(critic_spec(T), 7), init_params(critic_spec(T), 7)
    assert all(a[k].numpy().tobytes() == b[k].numpy().tobytes() for k in a)
    assert not init_params(critic_spec(T), 8).equal(a)
    assert all(torch.all(a[k] == 0) for k in a if k.endswith("bias"))
    bound = 1 / np.sqrt(3 * 7)
    assert float(a["conv1.weight"].abs().max()) <= bound


def test_parameter_set_validates_shapes():
    spec = actor_spec(10)
    tensors = dict(zero_params(spec))
    tensors["dense.bias"] = torch.zeros(3, dtype=torch.float64)
    with pytest.raises(ValueError):
        ParameterSet(spec, tensors)


def test_zero_network_outputs():
    s = make_state([(0.3, 0.4)], T)
    assert actor_forward(zero_params(actor_spec(T)), s) == (0.5, 0.5)
    assert critic_forward(zero_params(critic_spec(T)), s) == 0.0
    assert discriminator_forward(zero_params(discriminator_spec(T)), s) == 0.5


def test_forward_deterministic():
    rng = np.random.default_rng(0)
    p, s = init_params(actor_spec(T), 1), random_state(rng)
    assert actor_forward(p, s) == actor_forward(p, s)


def test_output_ranges():
    rng = np.random.default_rng(1)
    states = torch.from_numpy(np.stack([random_state(rng).slots for _ in range(1000)]))
    actor = perturbed(init_params(actor_spec(T), 2), rng, 0.5)
    disc = perturbed(init_params(discriminator_spec(T), 3), rng, 0.01)
    a = actor_batch(actor, states)
    assert bool(((a >= 0) & (a <= 1)).all())
    from hwgail.networks import forward

    d = forward(disc, states)
    assert bool(((d > 0) & (d < 1)).all())


def test_critic_head_is_linear():
    rng = np.random.default_rng(2)
    p = init_params(critic_spec(T), 4)
    s = random_state(rng)
    v = critic_forward(p, s)
    scaled = ParameterSet(p.spec, ((k, v_ * 3.0 if k == "dense.weight" else v_) for k, v_ in p.items()))
    assert critic_forward(scaled, s) == pytest.approx(3.0 * v, rel=1e-12)


@pytest.mark.parametrize("spec_fn,squash", [(actor_spec, sigmoid), (critic_spec, None), (discriminator_spec, sigmoid)])
def test_forward_matches_naive_loops(spec_fn, squash):
    rng = np.random.default_rng(5)
    for case in range(5):
        p = perturbed(init_params(spec_fn(T), case), rng)
        s = random_state(rng)
        ref = naive_forward(p.numpy(), s.slots)
        if squash is not None:
            ref = squash(ref)
        if spec_fn is actor_spec:
            got = np.array(actor_forward(p, s))
        elif spec_fn is critic_spec:
            got = np.array([critic_forward(p, s)])
        else:
            got = np.array([discriminator_forward(p, s)])
        assert np.allclose(got, ref, atol=1e-6, rtol=0)


def test_shape_mismatch_rejected():
    p = init_params(critic_spec(T), 0)
    with pytest.raises(ValueError):
        critic_forward(p, make_state([(0.1, 0.1)], T - 1))


def test_gradients_of_constant_are_zero():
    p = init_params(critic_spec(10), 0)
    g = loss_gradients(lambda q: torch.tensor(3.0, dtype=torch.float64), p)
    assert all(torch.all(v == 0) for v in g.values())


def test_gradients_linear_in_loss():
    rng = np.random.default_rng(6)
    p = init_params(critic_spec(10), 0)
    x = torch.from_numpy(np.stack([random_state(rng, 10).slots for _ in range(4)]))
    from hwgail.networks import critic_batch

    g1 = loss_gradients(lambda q: (critic_batch(q, x) ** 2).mean(), p)
    g3 = loss_gradients(lambda q: -2.5 * (critic_batch(q, x) ** 2).mean(), p)
    for k in g1:
        assert torch.allclose(g3[k], -2.5 * g1[k], atol=1e-9, rtol=0)


def test_non_finite_loss_rejected():
    p = init_params(critic_spec(10), 0)
    with pytest.raises(FloatingPointError):
        loss_gradients(lambda q: q["dense.bias"].sum() / 0.0 * 0.0 + float("nan"), p)


def test_checkpoint_round_trip_bitwise(tmp_path):
    for dtype in (torch.float64, torch.float32):
        p = init_params(discriminator_spec(T), 9, dtype)
        save_params(p, tmp_path / "d.npz", seed=9, step=12)
        q, manifest = load_params(tmp_path / "d.npz")
        assert q.spec == p.spec and q.dtype == dtype
        assert all(p[k].numpy().tobytes() == q[k].numpy().tobytes() for k in p)
        assert manifest["step"] == 12 and manifest["seed"] == 9
        assert manifest["version"].startswith("hwgail-checkpoint")


def test_non_default_stride_sizes_dense_layer():
    spec = NetworkSpec(20, 1, "identity", stride=2)
    p = init_params(spec, 0)
    out = critic_forward(p, make_state([(0.5, 0.5)], 20))
    assert np.isfinite(out)
    assert spec.dense_in == 64 * 5


class _Softplus:
    """``torch.nn.functional`` with ReLU swapped for a smooth activation."""

    def __getattr__(self, name):
        return getattr(torch.nn.functional, name)

    @staticmethod
    def relu(x):
        return torch.nn.functional.softplus(x, beta=5.0)


def test_gradients_match_finite_differences_for_smooth_activation(monkeypatch):
    # control for the acceptance gradient check: with no kinks, every coordinate agrees
    monkeypatch.setattr("hwgail.networks.F", _Softplus())
    rng = np.random.default_rng(11)
    params = init_params(discriminator_spec(12), 4)
    states = torch.from_numpy(np.stack([random_state(rng, 12).slots for _ in range(4)]))
    loss = lambda p: torch.sigmoid(discriminator_logits(p, states)).log().mean()  # noqa: E731
    grads = loss_gradients(loss, params)
    names = list(params)
    coords = [(names[k % len(names)], int(rng.integers(params[names[k % len(names)]].numel()))) for k in range(60)]
    numeric = central_differences(lambda p: loss(p).detach(), params.detached(), coords, h=1e-4)
    analytic = np.array([float(grads[n].reshape(-1)[i]) for n, i in coords])
    assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-9)
