import math

import numpy as np
import pytest
import torch

from slidesurv.gat import GatLayer

torch.set_num_threads(1)


def make_layer(d_in, d_out, d_edge, seed=0, **kw):
    layer = GatLayer(d_in, d_out, d_edge, **kw)
    layer.reset_parameters(torch.Generator().manual_seed(seed))
    return layer


def rand(shape, seed):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed),
                       dtype=torch.float64)


def random_graph(n, seed, d_in=4, d_edge=3):
    rng = np.random.default_rng(seed)
    pairs = {(i, i) for i in range(n)}
    for i in range(n):
        for j in rng.choice(n, size=min(3, n), replace=False):
            pairs.add((i, int(j)))
            pairs.add((int(j), i))
    edges = torch.tensor(sorted(pairs), dtype=torch.long)
    x = torch.tensor(rng.normal(size=(n, d_in)))
    e = torch.tensor(rng.normal(size=(edges.shape[0], d_edge)))
    return x, edges, e


class TestAttention:
    def test_self_loop_only_gives_one(self):
        layer = make_layer(3, 2, 2)
        x = rand((1, 3), 1)
        edges = torch.tensor([[0, 0]])
        e = rand((1, 2), 2)
        alpha = layer.attention(x, edges, e)
        assert float(alpha.detach()[0]) == 1.0

    def test_identical_neighbors_split_evenly(self):
        layer = make_layer(3, 2, 2)
        feat = rand((1, 3), 3)
        x = torch.cat([rand((1, 3), 4), feat, feat])
        e_shared = rand((1, 2), 5)
        edges = torch.tensor([[0, 1], [0, 2], [1, 1], [2, 2]])
        e = torch.cat([e_shared, e_shared, rand((1, 2), 6), rand((1, 2), 7)])
        alpha = layer.attention(x, edges, e)
        torch.testing.assert_close(alpha[:2], torch.tensor([0.5, 0.5], dtype=torch.float64))

    def test_three_node_hand_computation(self):
        # step-by-step evaluation of the attention formula with all-0.1
        # parameters and slope 0.2, float64 throughout
        d_in, d_out, d_edge = 2, 2, 2
        layer = GatLayer(d_in, d_out, d_edge, leaky_slope=0.2)
        with torch.no_grad():
            layer.w.weight.fill_(0.1)
            layer.proj_edge.weight.fill_(0.1)
            layer.att.fill_(0.1)
        x = torch.tensor([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]], dtype=torch.float64)
        edges = torch.tensor([[0, 0], [0, 1], [0, 2], [1, 1], [2, 2]])
        e = torch.tensor([[0.0, 0.0], [1.0, 0.5], [0.2, 0.1], [0.0, 0.0],
                          [0.0, 0.0]], dtype=torch.float64)

        w = np.full((d_out, d_in), 0.1)
        p = np.full((d_in, d_edge), 0.1)
        a = np.full(3 * d_out, 0.1)
        xn = x.numpy()
        en = e.numpy()
        logits = []
        for (i, j), ef in zip(edges.tolist(), en):
            feat = np.concatenate([w @ xn[i], w @ xn[j], w @ (p @ ef)])
            val = a @ feat
            logits.append(val if val >= 0 else 0.2 * val)
        logits = np.array(logits)
        exp0 = np.exp(logits[:3] - logits[:3].max())
        expected_node0 = exp0 / exp0.sum()

        alpha = layer.attention(x, edges, e).detach().numpy()
        np.testing.assert_allclose(alpha[:3], expected_node0, rtol=0, atol=1e-15)
        np.testing.assert_allclose(alpha[3:], 1.0, rtol=0, atol=0)

    def test_rows_sum_to_one_and_exact_zeros_off_edges(self):
        for seed in range(10):
            n = 6 + seed
            x, edges, e = random_graph(n, seed)
            layer = make_layer(4, 3, 3, seed=seed)
            alpha = layer.attention(x, edges, e).detach()
            dense = torch.zeros(n, n, dtype=torch.float64)
            dense[edges[:, 0], edges[:, 1]] = alpha
            sums = dense.sum(dim=1)
            assert float((sums - 1).abs().max()) < 1e-12
            mask = torch.zeros(n, n, dtype=torch.bool)
            mask[edges[:, 0], edges[:, 1]] = True
            assert torch.all(dense[~mask] == 0.0)

    def test_isolated_node_rejected(self):
        layer = make_layer(3, 2, 2)
        x = rand((2, 3), 8)
        edges = torch.tensor([[0, 0]])  # node 1 has no edges
        with pytest.raises(ValueError, match="incident"):
            layer.attention(x, edges, rand((1, 2), 9))


class TestForward:
    def test_isolated_self_loops_give_wx(self):
        layer = make_layer(3, 2, 2)
        x = rand((4, 3), 10)
        edges = torch.tensor([[i, i] for i in range(4)])
        e = torch.zeros(4, 2, dtype=torch.float64)
        out = layer(x, edges, e)
        torch.testing.assert_close(out, layer.w(x), rtol=0, atol=1e-15)

    def test_equal_features_collapse_to_wx(self):
        layer = make_layer(3, 2, 2)
        row = rand((1, 3), 11)
        x = row.repeat(5, 1)
        _, edges, e = random_graph(5, 12, d_in=3, d_edge=2)
        out = layer(x, edges, e)
        expected = layer.w(row).repeat(5, 1)
        torch.testing.assert_close(out, expected, rtol=1e-12, atol=1e-12)

    def test_matches_dense_reference(self):
        x, edges, e = random_graph(5, 13)
        layer = make_layer(4, 3, 3, seed=13)
        out = layer(x, edges, e).detach()
        alpha = layer.attention(x, edges, e).detach()
        dense = torch.zeros(5, 5, dtype=torch.float64)
        dense[edges[:, 0], edges[:, 1]] = alpha
        expected = dense @ layer.w(x).detach()
        torch.testing.assert_close(out, expected, rtol=1e-12, atol=1e-12)

    def test_edge_order_invariance(self):
        x, edges, e = random_graph(7, 14)
        layer = make_layer(4, 3, 3, seed=14)
        out1 = layer(x, edges, e).detach()
        perm = torch.randperm(edges.shape[0], generator=torch.Generator().manual_seed(15))
        out2 = layer(x, edges[perm], e[perm]).detach()
        assert torch.equal(out1, out2)
        a1 = layer.attention(x, edges, e).detach()
        a2 = layer.attention(x, edges[perm], e[perm]).detach()
        assert torch.equal(a1[perm], a2)

    def test_two_heads_average(self):
        x, edges, e = random_graph(5, 16)
        layer = make_layer(4, 3, 3, seed=16, heads=2)
        out = layer(x, edges, e)
        assert out.shape == (5, 3)
        alpha = layer.attention(x, edges, e).detach()
        assert alpha.shape == (edges.shape[0], 2)
        # per-head rows still sum to 1
        for h in range(2):
            dense = torch.zeros(5, 5, dtype=torch.float64)
            dense[edges[:, 0], edges[:, 1]] = alpha[:, h]
            assert float((dense.sum(1) - 1).abs().max()) < 1e-12

    def test_shape_mismatch_rejected(self):
        layer = make_layer(3, 2, 2)
        with pytest.raises(ValueError, match="shape mismatch"):
            layer(rand((2, 5), 17), torch.tensor([[0, 0], [1, 1]]), rand((2, 2), 18))

    def test_gradients_match_finite_differences(self):
        x, edges, e = random_graph(5, 19)
        x = x.clone().requires_grad_(True)
        e = e.clone().requires_grad_(True)
        layer = make_layer(4, 3, 3, seed=19)
        weights = rand((5, 3), 20)

        def scalar():
            return (layer(x, edges, e) * weights).sum()

        loss = scalar()
        loss.backward()
        h = 1e-5
        targets = [("x", x), ("e", e)] + list(layer.named_parameters())
        for name, t in targets:
            flat = t.detach().view(-1)
            grad = t.grad.view(-1)
            for idx in range(flat.numel()):
                orig = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = orig + h
                    up = float(scalar().detach())
                    flat[idx] = orig - h
                    down = float(scalar().detach())
                    flat[idx] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), abs(float(grad[idx])), 1e-8)
                assert abs(fd - float(grad[idx])) / denom < 1e-4, name
