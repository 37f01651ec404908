import numpy as np
import pytest

from transport_pinn import autodiff as ad
from transport_pinn import mlp
from transport_pinn.autodiff import Tape
from transport_pinn.mlp import NetworkConfig


def test_paper_network_parameter_count():
    # independent count of (fan_in * fan_out + fan_out) over the four layers
    widths = [3, 256, 256, 256, 1]
    expected = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        expected += fan_in * fan_out + fan_out
    assert expected == 132_865
    store = mlp.init_parameters(NetworkConfig(tuple(widths)))
    assert len(store) == expected


def test_smallest_network_has_four_parameters():
    assert len(mlp.init_parameters(NetworkConfig((3, 1)))) == 4


def test_init_is_deterministic_and_glorot_bounded():
    cfg = NetworkConfig((3, 8, 8, 1), seed=11)
    a, b = mlp.init_parameters(cfg), mlp.init_parameters(cfg)
    np.testing.assert_array_equal(a.values, b.values)
    c = mlp.init_parameters(NetworkConfig((3, 8, 8, 1), seed=12))
    assert not np.array_equal(a.values, c.values)
    for k, (fi, fo) in enumerate(cfg.layer_shapes):
        assert np.all(np.abs(a.weight(k)) <= np.sqrt(6 / (fi + fo)))
        assert not a.bias(k).any()


@pytest.mark.parametrize("widths", [(3,), (2, 1), (3, 4, 2), (3, 0, 1)])
def test_config_validation(widths):
    with pytest.raises(ValueError):
        NetworkConfig(widths)


def _traced(store, cfg, t, x, v):
    with Tape():
        out = mlp.forward(
            store, cfg, ad.lift_input(t, "t"), ad.lift_input(x, "x"), ad.lift_input(v, "v")
        )
        return out.item(), float(out.tangent_t), float(out.tangent_x)


def test_zero_network_outputs_zero():
    cfg = NetworkConfig((3, 5, 5, 1))
    store = ad.ParameterStore.for_layers(cfg.layer_shapes)
    assert _traced(store, cfg, 0.3, 0.2, -0.9) == (0.0, 0.0, 0.0)


def test_one_hidden_unit_matches_hand_evaluation():
    cfg = NetworkConfig((3, 1, 1))
    store = ad.ParameterStore.for_layers(cfg.layer_shapes)
    # layer 0: weights (t, x, v) -> hidden, bias; layer 1: hidden -> out, bias
    store.values[:] = [0.8, -0.5, 0.3, 0.1, 1.7, -0.2]
    t, x, v = 0.4, 0.25, -0.6
    pre = 0.8 * t - 0.5 * x + 0.3 * v + 0.1
    f, f_t, f_x = _traced(store, cfg, t, x, v)
    assert f == pytest.approx(1.7 * np.tanh(pre) - 0.2, abs=1e-15)
    assert f_t == pytest.approx(1.7 * (1 - np.tanh(pre) ** 2) * 0.8, abs=1e-15)
    assert f_x == pytest.approx(1.7 * (1 - np.tanh(pre) ** 2) * -0.5, abs=1e-15)


def test_t_independent_network_has_zero_t_tangent():
    cfg = NetworkConfig((3, 6, 1), seed=2)
    store = mlp.init_parameters(cfg)
    store.weight(0)[0, :] = 0.0
    assert _traced(store, cfg, 0.5, 0.5, 0.5)[1] == 0.0


def test_tangents_match_central_differences_on_random_nets():
    rng = np.random.default_rng(7)
    h = 1e-5
    for trial in range(20):
        widths = (3, *rng.integers(1, 9, size=rng.integers(1, 3)), 1)
        cfg = NetworkConfig(tuple(int(w) for w in widths), seed=trial)
        store = mlp.init_parameters(cfg)
        store.values += rng.normal(scale=0.2, size=len(store))
        pts = rng.uniform([0, 0, -1], [0.1, 1, 1], size=(5, 3))
        got = mlp.evaluate_grid(store, cfg, pts)
        for col, axis in ((1, 0), (2, 1)):
            up, dn = pts.copy(), pts.copy()
            up[:, axis] += h
            dn[:, axis] -= h
            fd = (mlp.predict(store, cfg, up) - mlp.predict(store, cfg, dn)) / (2 * h)
            np.testing.assert_allclose(got[:, col], fd, rtol=1e-6, atol=1e-9)


def test_evaluate_grid_matches_forward_and_is_order_preserving():
    cfg = NetworkConfig((3, 7, 7, 1), seed=4)
    store = mlp.init_parameters(cfg)
    pts = np.random.default_rng(0).uniform(-1, 1, size=(12, 3))
    rows = mlp.evaluate_grid(store, cfg, pts)
    assert rows.shape == (12, 3)
    np.testing.assert_allclose(rows[3], _traced(store, cfg, *pts[3]), rtol=0, atol=1e-15)
    np.testing.assert_allclose(rows[:, 0], mlp.predict(store, cfg, pts), rtol=0, atol=1e-14)
    perm = np.random.default_rng(1).permutation(12)
    np.testing.assert_array_equal(mlp.evaluate_grid(store, cfg, pts[perm]), rows[perm])
    with pytest.raises(ValueError):
        mlp.evaluate_grid(store, cfg, np.empty((0, 3)))


def test_evaluate_grid_on_test1_training_grid_is_finite():
    from transport_pinn import physics as ph

    grid = ph.CollocationGrid.uniform(50, 20, 0.5 / 400, ph.gauss_legendre(17), "periodic")
    cfg = NetworkConfig((3, 16, 16, 1), seed=0)
    rows = mlp.evaluate_grid(mlp.init_parameters(cfg), cfg, grid.interior)
    assert rows.shape == (17_000, 3)
    assert np.all(np.isfinite(rows))


def test_layout_mismatch_raises():
    store = mlp.init_parameters(NetworkConfig((3, 4, 1)))
    with pytest.raises(ValueError):
        mlp.predict(store, NetworkConfig((3, 5, 1)), np.zeros((1, 3)))


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    cfg = NetworkConfig((3, 9, 4, 1), seed=5)
    store = mlp.init_parameters(cfg)
    store.values += np.random.default_rng(5).normal(size=len(store)) * 1e-3
    path = tmp_path / "ckpt.json"
    mlp.save_checkpoint(path, store, cfg)
    loaded, cfg2 = mlp.load_checkpoint(path)
    assert cfg2 == cfg
    np.testing.assert_array_equal(loaded.values, store.values)
    pts = np.random.default_rng(6).uniform(size=(10, 3))
    np.testing.assert_array_equal(mlp.predict(loaded, cfg2, pts), mlp.predict(store, cfg, pts))
    doc = mlp.to_checkpoint(store, cfg)
    assert set(doc) == {"widths", "seed", "layers"}
    assert len(doc["layers"][0]["w"]) == 27 and len(doc["layers"][0]["b"]) == 9
