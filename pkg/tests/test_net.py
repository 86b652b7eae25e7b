
import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrssb.net import NetTooLarge, build_net, estimate_net_size, net_size_bound, save_net_csv


def test_one_dimensional_net():
    net = build_net(np.array([[1.0], [0.0]]), 1.0, 2.0, 0.5)
    assert sorted(net.coords[:, 0].tolist()) == [-2.0, -1.5, -1.0, 1.0, 1.5, 2.0]
    np.testing.assert_allclose(net.points[:, 1], 0.0)


def test_norms_inside_annulus():
    net = build_net(np.eye(3)[:, :2], 1.0, 2.0, 0.2)
    assert np.all(net.norms >= 1.0 - 1e-12) and np.all(net.norms <= 2.0 + 1e-12)


@given(st.integers(1, 3), st.floats(0.15, 0.5), st.integers(0, 1000))
def test_covering_property(k, r, seed):
    basis = np.linalg.qr(np.random.default_rng(seed).standard_normal((k + 2, k)))[0]
    net = build_net(basis, 1.0, 2.0, r)
    rng = np.random.default_rng(seed + 1)
    dirs = rng.standard_normal((200, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = dirs * rng.uniform(1.0, 2.0, (200, 1))
    gaps = np.min(np.linalg.norm(pts[:, None, :] - net.coords[None, :, :], axis=2), axis=1)
    assert gaps.max() <= r + 1e-12


def test_points_match_basis_embedding():
    basis = np.linalg.qr(np.random.default_rng(0).standard_normal((5, 2)))[0]
    net = build_net(basis, 1.0, 2.0, 0.3)
    np.testing.assert_allclose(net.points, net.coords @ basis.T)


def test_deterministic_order():
    a = build_net(np.eye(2), 1.0, 2.0, 0.2)
    b = build_net(np.eye(2), 1.0, 2.0, 0.2)
    assert np.array_equal(a.points, b.points)
    assert len(np.unique(np.round(a.coords, 12), axis=0)) == len(a)


def test_size_estimate_and_bound():
    net = build_net(np.eye(2), 1.0, 2.0, 0.1)
    est = estimate_net_size(2, 1.0, 2.0, 0.1)
    assert 0.5 * est < len(net) < 1.5 * est
    assert len(net) <= net_size_bound(2, 2.0, 0.1)


def test_refuses_huge_net():
    with pytest.raises(NetTooLarge) as info:
        build_net(np.eye(6), 1.0, 2.0, 0.01, max_points=1e6)
    assert info.value.estimate > 1e6


def test_resolution_domain():
    with pytest.raises(ValueError):
        build_net(np.eye(2), 1.0, 2.0, 1.5)


def test_save(tmp_path):
    net = build_net(np.eye(2), 1.0, 2.0, 0.5)
    save_net_csv(net, tmp_path / "net.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "net.csv", delimiter=","), net.points)
