import numpy as np
import pytest
import torch

from pmppinn import autodiff as ad
from pmppinn import networks
from pmppinn.networks import LayerSpec, PinnModel


def tiny(seed=0):
    return PinnModel(seed, networks.state_spec(8, 2), networks.costate_spec(8, 2))


def _t(v):
    return torch.tensor(v, dtype=torch.float64)


def test_seeded_initialisation():
    a, b, c = tiny(1), tiny(1), tiny(2)
    for p, q in zip(a.parameters(), b.parameters()):
        assert torch.equal(p, q)
    assert any(not torch.equal(p, q) for p, q in zip(a.parameters(), c.parameters()))


def test_initial_values():
    m = tiny()
    assert all(torch.count_nonzero(b) == 0 for b in m.state.biases + m.costate.biases)
    assert all(a.item() == 1.0 for a in m.state.alphas + m.state.betas)
    w = m.state.weights[1]
    bound = np.sqrt(6.0 / 16)
    assert float(w.detach().abs().max()) <= bound


def test_outputs_finite_and_tf_positive(rng):
    m = tiny(3)
    x0 = _t(rng.uniform(-15, 15, (1000, 2)))
    tau = _t(rng.uniform(0, 1, 1000))
    st = m.forward_state(x0, tau)
    co = m.forward_costate(x0, tau)
    assert torch.isfinite(st.x).all() and torch.isfinite(st.psi).all()
    assert (st.tf > 0).all() and torch.isfinite(co.p).all()
    ends = m.forward_state(_t([[1.0, 2.0], [1.0, 2.0]]), _t([0.0, 1.0]))
    assert torch.isfinite(ends.x).all()


def test_costate_depends_on_initial_state():
    m = tiny(4)
    a = m.forward_costate(_t([1.0, 2.0]), _t(0.5)).p
    b = m.forward_costate(_t([-7.0, 3.0]), _t(0.5)).p
    assert not torch.equal(a, b)


def test_tau_derivatives_match_finite_differences(rng):
    m = tiny(5)
    h = 1e-6
    for _ in range(20):
        x0 = _t(rng.uniform(-15, 15, 2))
        tau = float(rng.uniform(0.01, 0.99))
        st = m.forward_state(x0, _t(tau), tangent=True)
        co = m.forward_costate(x0, _t(tau), tangent=True)
        up, dn = m.forward_state(x0, _t(tau + h)), m.forward_state(x0, _t(tau - h))
        cup, cdn = m.forward_costate(x0, _t(tau + h)), m.forward_costate(x0, _t(tau - h))
        pairs = [
            (st.dx, (up.x - dn.x) / (2 * h)),
            (st.dpsi, (up.psi - dn.psi) / (2 * h)),
            (st.dtf, (up.tf - dn.tf) / (2 * h)),
            (co.dp, (cup.p - cdn.p) / (2 * h)),
        ]
        for exact, fd in pairs:
            assert torch.all((exact - fd).abs() <= 1e-6 * torch.clamp(fd.abs(), min=1.0))


def test_scalar_route_matches_vectorised_and_its_tau_derivative():
    m = tiny(6)
    x0, tau = (2.0, -3.0), 0.37
    st = m.forward_state(_t(x0), _t(tau), tangent=True)
    co = m.forward_costate(_t(x0), _t(tau), tangent=True)
    with ad.Tape() as tape:
        _, nested = m.scalar_parameters(tape)
        tv = tape.var(tau)
        x1, x2, psi, tf = m.scalar_state(nested, x0, tv)
        p1, p2 = m.scalar_costate(nested, x0, tv)
        d = [ad.gradient(v, [tv])[0] for v in (x1, x2, psi, tf, p1, p2)]
    assert x1.value == pytest.approx(st.x[0].item(), rel=1e-13)
    assert tf.value == pytest.approx(st.tf.item(), rel=1e-13)
    assert p2.value == pytest.approx(co.p[1].item(), rel=1e-12, abs=1e-14)
    vec = [st.dx[0], st.dx[1], st.dpsi, st.dtf, co.dp[0], co.dp[1]]
    for a, b in zip(d, vec):
        assert a == pytest.approx(b.item(), rel=1e-11, abs=1e-13)


def test_parameter_gradients_match_finite_differences(rng):
    # scalar function of both networks' outputs, 200 random parameter probes
    m = tiny(7)
    x0 = _t(rng.uniform(-15, 15, (4, 2)))
    tau = _t(rng.uniform(0, 1, 4))

    def objective():
        st = m.forward_state(x0, tau, tangent=True)
        co = m.forward_costate(x0, tau)
        return (st.x.sum() * 0.1 + torch.sin(st.psi).sum() + st.tf.sum() + (co.p**2).sum() + st.dx.sum() * 0.01)

    params = m.parameters()
    grads = torch.autograd.grad(objective(), params)
    sizes = [p.numel() for p in params]
    h = 1e-6
    for _ in range(200):
        k = int(rng.integers(len(params)))
        j = int(rng.integers(sizes[k]))
        flat = params[k].data.view(-1)
        orig = float(flat[j])
        with torch.no_grad():
            flat[j] = orig + h
            up = float(objective())
            flat[j] = orig - h
            dn = float(objective())
            flat[j] = orig
        fd = (up - dn) / (2 * h)
        g = float(grads[k].reshape(-1)[j])
        assert abs(g - fd) <= 1e-5 * max(abs(fd), 1.0)


def test_forward_is_pure():
    m = tiny(8)
    x0, tau = _t([[1.0, 2.0]]), _t([0.3])
    a = m.forward_state(x0, tau, tangent=True)
    b = m.forward_state(x0, tau, tangent=True)
    for u, v in zip(a, b):
        assert torch.equal(u, v)


def test_non_finite_activation_reports_layer():
    m = tiny(9)
    with torch.no_grad():
        m.state.weights[1][0, 0] = float("inf")
    with pytest.raises(networks.NonFiniteOutput, match="hidden layer 2"):
        m.forward_state(_t([1.0, 2.0]), _t(0.5))


def test_l2_penalty():
    m = tiny(10)
    with torch.no_grad():
        for w in m.costate.weights:
            w.zero_()
    assert m.l2_penalty().item() == 0.0
    with torch.no_grad():
        m.costate.weights[0][0, 0] = 2.0
    assert m.l2_penalty().item() == pytest.approx(4e-6, rel=1e-15)
    m2 = tiny(11)
    dump = [p.detach().numpy() for p in m2.costate.parameters()]
    # weights are the matrices; biases are vectors and excluded
    ref = 1e-6 * sum(float(np.sum(a * a)) for a in dump if a.ndim == 2)
    assert m2.l2_penalty().item() == pytest.approx(ref, rel=1e-13)


def test_save_load_round_trip(tmp_path):
    m = tiny(12)
    path = tmp_path / "m.npz"
    m.save(path)
    back = PinnModel.load(path)
    assert back.config() == m.config()
    for p, q in zip(m.parameters(), back.parameters()):
        assert torch.equal(p, q)
    path2 = tmp_path / "m2.npz"
    back.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_other_versions(tmp_path):
    import json
    import zipfile

    m = tiny(13)
    path = tmp_path / "m.npz"
    m.save(path)
    cfg = m.config()
    cfg["format_version"] = 99
    with zipfile.ZipFile(path) as zf:
        members = {n: zf.read(n) for n in zf.namelist()}
    bad = tmp_path / "bad.npz"
    with zipfile.ZipFile(bad, "w") as zf:
        for n, data in members.items():
            if n != "header.npy":
                zf.writestr(n, data)
    with zipfile.ZipFile(bad, "a") as zf, zf.open("header.npy", "w") as fh:
        np.lib.format.write_array(fh, np.array(json.dumps(cfg)))
    with pytest.raises(ValueError, match="unsupported"):
        PinnModel.load(bad)


def test_layer_spec_validation():
    with pytest.raises(ValueError):
        LayerSpec(0, "silu")
    with pytest.raises(ValueError):
        LayerSpec(4, "relu")
