import numpy as np
import pytest
import torch

from supportneeds.config import ModelConfig
from supportneeds.errors import ConfigError
from supportneeds.qa_model import (
    InteractionKernelBank,
    QAModel,
    aggregate_answers,
    attention_scores,
    build_interaction_matrix,
)


def brute_force_conv2d(grid, weight, bias):
    """Independent nested-loop valid convolution oracle.

    grid: (C, H, W); weight: (F, C, kh, kw); bias: (F,).
    """
    c, h, w = grid.shape
    f, c2, kh, kw = weight.shape
    assert c == c2
    out = np.zeros((f, h - kh + 1, w - kw + 1), dtype=np.float64)
    for fi in range(f):
        for i in range(h - kh + 1):
            for j in range(w - kw + 1):
                acc = bias[fi]
                for ci in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += weight[fi, ci, di, dj] * grid[ci, i + di, j + dj]
                out[fi, i, j] = acc
    return out


def adaptive_max_pool_oracle(activation, p):
    """Reference adaptive max pooling matching the floor/ceil region rule."""
    f, h, w = activation.shape
    out = np.zeros((f, p, p), dtype=np.float64)
    for fi in range(f):
        for oi in range(p):
            for oj in range(p):
                i0, i1 = (oi * h) // p, -(-((oi + 1) * h) // p)
                j0, j1 = (oj * w) // p, -(-((oj + 1) * w) // p)
                out[fi, oi, oj] = activation[fi, i0:i1, j0:j1].max()
    return out


class TestInteractionMatrix:
    def test_shape(self):
        q = torch.randn(2, 4)
        a = torch.randn(3, 4)
        assert build_interaction_matrix(q, a).shape == (2, 3, 8)

    def test_cell_contents_direct_indexing(self):
        q = torch.arange(8, dtype=torch.float64).reshape(2, 4)
        a = torch.arange(100, 112, dtype=torch.float64).reshape(3, 4)
        m = build_interaction_matrix(q, a)
        for i in range(2):
            for j in range(3):
                assert torch.equal(m[i, j, :4], q[i])
                assert torch.equal(m[i, j, 4:], a[j])

    def test_zero_padded_question_row(self):
        q = torch.randn(3, 4)
        q[2] = 0.0
        a = torch.randn(2, 4)
        m = build_interaction_matrix(q, a)
        assert torch.all(m[2, :, :4] == 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            build_interaction_matrix(torch.randn(2, 4), torch.randn(3, 5))


class TestKernelBank:
    def test_feature_length_table_defaults(self):
        bank = InteractionKernelBank(
            dim=8, kernel_sizes=((1, 1), (1, 2), (2, 1), (2, 2)),
            filters=8, pool_size=4, grid=(8, 6),
        )
        assert bank.feature_length == 4 * 8 * 16 == 512

    def test_feature_length_small(self):
        bank = InteractionKernelBank(
            dim=4, kernel_sizes=((1, 1), (2, 2)), filters=2, pool_size=2, grid=(3, 3)
        )
        assert bank.feature_length == 2 * 2 * 4

    def test_constant_input_constant_pooled_output(self):
        bank = InteractionKernelBank(
            dim=2, kernel_sizes=((1, 1),), filters=1, pool_size=4, grid=(3, 3)
        ).double()
        m = torch.full((3, 3, 4), 0.7, dtype=torch.float64)
        out = bank.apply_single(m)
        assert out.shape == (16,)
        assert torch.allclose(out, out[0].expand(16))

    def test_matches_brute_force_oracle_hand_set(self):
        torch.manual_seed(3)
        bank = InteractionKernelBank(
            dim=2, kernel_sizes=((2, 2),), filters=1, pool_size=2, grid=(3, 3)
        ).double()
        m = torch.randn(3, 3, 4, dtype=torch.float64)
        got = bank.apply_single(m).detach().numpy()

        grid = m.permute(2, 0, 1).numpy()
        weight = bank.convs[0].weight.detach().numpy()
        bias = bank.convs[0].bias.detach().numpy()
        conv = brute_force_conv2d(grid, weight, bias)
        pooled = adaptive_max_pool_oracle(conv, 2)
        assert np.allclose(got, pooled.reshape(-1), atol=1e-9)

    def test_matches_oracle_on_random_small_grids(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            m_rows = int(rng.integers(2, 5))
            n_cols = int(rng.integers(2, 5))
            d = int(rng.integers(1, 5))
            kh = int(rng.integers(1, m_rows + 1))
            kw = int(rng.integers(1, n_cols + 1))
            torch.manual_seed(trial)
            bank = InteractionKernelBank(
                dim=d, kernel_sizes=((kh, kw),), filters=2, pool_size=2,
                grid=(m_rows, n_cols),
            ).double()
            m = torch.randn(m_rows, n_cols, 2 * d, dtype=torch.float64)
            got = bank.apply_single(m).detach().numpy()
            conv = brute_force_conv2d(
                m.permute(2, 0, 1).numpy(),
                bank.convs[0].weight.detach().numpy(),
                bank.convs[0].bias.detach().numpy(),
            )
            expected = adaptive_max_pool_oracle(conv, 2).reshape(-1)
            assert np.allclose(got, expected, atol=1e-9)

    def test_kernel_larger_than_grid_rejected(self):
        with pytest.raises(ConfigError):
            InteractionKernelBank(
                dim=4, kernel_sizes=((3, 1),), filters=1, pool_size=2, grid=(2, 4)
            )


class TestAttention:
    def test_single_real_answer(self):
        w = attention_scores(
            torch.randn(4), torch.randn(1, 4), torch.tensor([True]),
            torch.randn(4, 4), torch.zeros(()),
        )
        assert torch.allclose(w, torch.tensor([1.0]))

    def test_identical_answers_uniform(self):
        q = torch.randn(4)
        a = torch.randn(4).expand(3, 4)
        w = attention_scores(
            q, a, torch.tensor([True, True, True]), torch.randn(4, 4), torch.zeros(())
        )
        assert torch.allclose(w, torch.full((3,), 1 / 3))

    def test_hand_computed_weights(self):
        # d=2 scalar oracle: s_k = tanh(q^T W a_k + b), softmax over k
        q = torch.tensor([1.0, 2.0], dtype=torch.float64)
        w_s = torch.tensor([[0.5, -0.25], [0.1, 0.3]], dtype=torch.float64)
        b_s = torch.tensor(0.2, dtype=torch.float64)
        a = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
        import math

        s1 = math.tanh((1.0 * 0.5 + 2.0 * 0.1) * 1.0 + 0.2)
        s2 = math.tanh((1.0 * -0.25 + 2.0 * 0.3) * 1.0 + 0.2)
        z1, z2 = math.exp(s1), math.exp(s2)
        expected = torch.tensor([z1 / (z1 + z2), z2 / (z1 + z2)], dtype=torch.float64)
        got = attention_scores(q, a, torch.tensor([True, True]), w_s, b_s)
        assert torch.allclose(got, expected, atol=1e-12)

    def test_padded_slots_get_exactly_zero(self):
        w = attention_scores(
            torch.randn(4), torch.randn(3, 4),
            torch.tensor([True, True, False]),
            torch.randn(4, 4), torch.zeros(()),
        )
        assert w[2].item() == 0.0
        assert abs(float(w.sum()) - 1.0) < 1e-6

    def test_zero_real_answers_is_error(self):
        with pytest.raises(ValueError):
            attention_scores(
                torch.randn(4), torch.randn(2, 4),
                torch.tensor([False, False]),
                torch.randn(4, 4), torch.zeros(()),
            )


class TestAggregate:
    def test_one_hot_weights_select(self):
        v = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
        out = aggregate_answers(torch.tensor([1.0, 0.0]), v)
        assert torch.equal(out, v[0])

    def test_uniform_weights_mean(self):
        v = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
        out = aggregate_answers(torch.tensor([0.5, 0.5]), v)
        assert torch.allclose(out, torch.tensor([2.0, 3.0]))

    def test_hand_computed(self):
        v = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        out = aggregate_answers(torch.tensor([0.3, 0.7]), v)
        assert torch.allclose(out, torch.tensor([0.3, 0.7]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            aggregate_answers(torch.ones(3), torch.randn(2, 4))


def _tiny_model(seed=0, dropout=0.0):
    torch.manual_seed(seed)
    return QAModel(
        dim=6,
        n_classes=3,
        model_cfg=ModelConfig(
            kernel_sizes=((1, 1), (2, 2)), filters=2, pool_size=2, dropout=dropout
        ),
        grid=(3, 2),
    )


def _tiny_batch(batch=4, k=2, seed=1):
    g = torch.Generator().manual_seed(seed)
    q_doc = torch.randn(batch, 6, generator=g)
    q_sent = torch.randn(batch, 3, 6, generator=g)
    a_doc = torch.randn(batch, k, 6, generator=g)
    a_sent = torch.randn(batch, k, 2, 6, generator=g)
    mask = torch.ones(batch, k, dtype=torch.bool)
    mask[0, 1] = False
    return q_doc, q_sent, a_doc, a_sent, mask


class TestForward:
    def test_probabilities_strictly_inside_unit_interval(self):
        model = _tiny_model().eval()
        probs, weights = model(*_tiny_batch())
        assert probs.shape == (4, 3)
        assert torch.all(probs > 0) and torch.all(probs < 1)

    def test_deterministic_in_eval_mode(self):
        model = _tiny_model().eval()
        batch = _tiny_batch()
        p1, w1 = model(*batch)
        p2, w2 = model(*batch)
        assert torch.equal(p1, p2) and torch.equal(w1, w2)

    def test_dropout_only_active_in_training(self):
        model = _tiny_model(dropout=0.5)
        batch = _tiny_batch()
        model.train()
        torch.manual_seed(0)
        p1, _ = model(*batch)
        torch.manual_seed(999)
        p2, _ = model(*batch)
        assert not torch.equal(p1, p2)
        model.eval()
        p3, _ = model(*batch)
        p4, _ = model(*batch)
        assert torch.equal(p3, p4)

    def test_trace_contents(self):
        model = _tiny_model().eval()
        probs, weights, trace = model(*_tiny_batch(), with_trace=True)
        assert trace.attention_weights.shape == (4, 2)
        assert trace.interaction_per_answer.shape == (4, 2, model.kernels.feature_length)
        assert trace.interaction_aggregate.shape == (4, model.kernels.feature_length)
        assert trace.probabilities.shape == (4, 3)
        assert trace.attention_weights[0, 1] == 0.0  # padded slot
        assert "1x1" in trace.layer_shapes and "2x2" in trace.layer_shapes

    def test_interaction_length_invariant_to_sentence_counts(self):
        # zero-padding rows must never change the feature length
        model = _tiny_model().eval()
        q_doc, q_sent, a_doc, a_sent, mask = _tiny_batch()
        for q_rows in range(1, 4):
            q_sent2 = q_sent.clone()
            q_sent2[:, q_rows:, :] = 0.0
            probs, _ = model(q_doc, q_sent2, a_doc, a_sent, mask)
            assert probs.shape == (4, 3)
