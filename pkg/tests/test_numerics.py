import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from radialpkt import numerics as nx
from radialpkt.model import (
    DecoderLayer, EncoderLayer, FeedForward, ModelConfig, MultiHeadAttention, PKTransformer, causal_mask,
)

TINY = ModelConfig(d_model=8, n_stacks=1, n_heads=2, d_k=4, d_v=4, d_ff=16, dropout=0.0, L_in=3)
finite = st.floats(-50, 50, allow_nan=False)


def dparams(module):
    module.double()
    return [p for p in module.parameters()]


@settings(max_examples=50)
@given(arrays(np.float64, (4, 7), elements=finite))
def test_softmax_rows_sum_to_one(a):
    p = nx.softmax(torch.from_numpy(a))
    np.testing.assert_allclose(p.sum(-1).numpy(), 1.0, atol=1e-12)
    assert torch.all(p >= 0)


def test_softmax_mask_zeroes_disallowed():
    x = torch.randn(3, 3, dtype=torch.float64)
    p = nx.softmax(x, causal_mask(3))
    assert torch.all(p[torch.triu(torch.ones(3, 3, dtype=torch.bool), 1)] == 0)
    with pytest.raises(nx.NumericError):
        nx.softmax(x, torch.zeros(3, 3, dtype=torch.bool))


@settings(max_examples=50)
@given(arrays(np.float64, (5, 16), elements=st.floats(-1e3, 1e3)))
def test_layer_norm_moments(a):
    if np.any(a.std(axis=1) < 1e-2):
        return
    y = nx.layer_norm(torch.from_numpy(a), eps=0.0).numpy()
    assert np.abs(y.mean(axis=1)).max() <= 1e-10
    np.testing.assert_allclose(y.var(axis=1), 1.0, atol=1e-6)


def test_shape_errors():
    a = torch.zeros(2, 3)
    with pytest.raises(nx.ShapeError):
        nx.matmul(a, a)
    with pytest.raises(nx.ShapeError):
        nx.add(a, torch.zeros(4))
    with pytest.raises(nx.ShapeError):
        nx.concat([a, torch.zeros(2, 4)], axis=0)
    with pytest.raises(nx.ShapeError):
        nx.slice_rows(a, 1, 5)
    with pytest.raises(nx.ShapeError):
        nx.layer_norm(a, torch.ones(2))
    assert nx.concat([a, torch.zeros(2, 4)], axis=1).shape == (2, 7)
    assert nx.transpose(a).shape == (3, 2)


def test_non_finite_detected():
    with pytest.raises(nx.NumericError):
        nx.reduce_mean_sq(torch.tensor([1.0, float("nan")]))


def test_matmul_gradient_vs_finite_differences():
    g = torch.Generator().manual_seed(0)
    a = torch.randn(4, 5, dtype=torch.float64, generator=g, requires_grad=True)
    b = torch.randn(5, 3, dtype=torch.float64, generator=g, requires_grad=True)
    c = torch.randn(4, 3, dtype=torch.float64, generator=g)
    assert nx.grad_check(lambda: (nx.matmul(a, b) * c).sum(), [a, b]) <= 1e-5


def test_quadratic_gradient():
    w = torch.randn(6, dtype=torch.float64, requires_grad=True)
    (w ** 2).sum().backward()
    assert torch.max(torch.abs(w.grad - 2 * w.detach())) <= 1e-8
    assert nx.grad_check(lambda: (w ** 2).sum(), [w]) <= 1e-8


def test_layer_norm_gradient():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(3, 8, dtype=torch.float64, generator=g, requires_grad=True)
    gain = torch.randn(8, dtype=torch.float64, generator=g, requires_grad=True)
    bias = torch.randn(8, dtype=torch.float64, generator=g, requires_grad=True)
    w = torch.randn(3, 8, dtype=torch.float64, generator=g)
    assert nx.grad_check(lambda: (nx.layer_norm(x, gain, bias) * w).sum(), [x, gain, bias]) <= 1e-4


def test_attention_block_gradient():
    torch.manual_seed(2)
    att = MultiHeadAttention(TINY)
    q = torch.randn(1, 3, 8, dtype=torch.float64, requires_grad=True)
    kv = torch.randn(1, 4, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(1, 3, 8, dtype=torch.float64)
    assert nx.grad_check(lambda: (att(q, kv) * w).sum(), dparams(att) + [q, kv]) <= 1e-4
    m = causal_mask(3)
    assert nx.grad_check(lambda: (att(q, q, m) * w).sum(), dparams(att) + [q]) <= 1e-4


def test_feed_forward_gradient():
    torch.manual_seed(3)
    ff = FeedForward(TINY)
    x = torch.randn(2, 3, 8, dtype=torch.float64, requires_grad=True)
    w = torch.randn(2, 3, 8, dtype=torch.float64)
    assert nx.grad_check(lambda: (ff(x) * w).sum(), dparams(ff) + [x]) <= 1e-4


def test_encoder_decoder_layers_gradient():
    torch.manual_seed(4)
    enc, dec = EncoderLayer(TINY), DecoderLayer(TINY)
    x = torch.randn(1, 3, 8, dtype=torch.float64)
    y = torch.randn(1, 3, 8, dtype=torch.float64)
    w = torch.randn(1, 3, 8, dtype=torch.float64)
    ps = dparams(enc) + dparams(dec)
    assert nx.grad_check(lambda: (dec(y, enc(x), causal_mask(3)) * w).sum(), ps) <= 1e-4


def test_full_one_stack_model_gradient():
    torch.manual_seed(5)
    model = PKTransformer(TINY).double().eval()
    src = torch.randn(2, 3, 8, dtype=torch.float64)
    tgt = torch.randn(2, 3, 8, dtype=torch.float64)
    loss = lambda: ((model(src, tgt) - tgt) ** 2).mean()
    assert nx.grad_check(loss, list(model.parameters())) <= 1e-4


def test_adam_first_step_closed_form():
    for g in (0.3, -2.0, 1e-3):
        w = torch.tensor([1.5], dtype=torch.float64)
        st_ = nx.adam_step([w], [torch.tensor([g], dtype=torch.float64)], nx.AdamState(lr=0.01))
        expected = 1.5 - 0.01 * g / (abs(g) + 1e-9)
        assert w.item() == pytest.approx(expected, abs=1e-15)
        assert st_.step == 1


def test_adam_zero_gradient_no_change():
    w = torch.randn(5, dtype=torch.float64)
    w0 = w.clone()
    s = nx.AdamState()
    for _ in range(3):
        nx.adam_step([w], [None], s)
        nx.adam_step([w], [torch.zeros(5, dtype=torch.float64)], s)
    assert torch.equal(w, w0)


def test_adam_matches_torch_reference():
    g = torch.Generator().manual_seed(6)
    target = torch.randn(4, 3, dtype=torch.float64, generator=g)
    mine = torch.zeros(4, 3, dtype=torch.float64, requires_grad=True)
    ref = torch.zeros(4, 3, dtype=torch.float64, requires_grad=True)
    s = nx.AdamState(lr=0.05)
    opt = torch.optim.Adam([ref], lr=0.05, betas=(0.9, 0.98), eps=1e-9)
    for _ in range(25):
        loss = ((mine - target) ** 4).sum()
        (gm,) = torch.autograd.grad(loss, [mine])
        nx.adam_step([mine], [gm], s)
        opt.zero_grad()
        ((ref - target) ** 4).sum().backward()
        opt.step()
    torch.testing.assert_close(mine.detach(), ref.detach(), rtol=1e-12, atol=1e-12)


def test_adam_converges_on_parabola():
    w = torch.zeros(1, dtype=torch.float64, requires_grad=True)
    s = nx.AdamState(lr=0.1)
    for _ in range(200):
        (g,) = torch.autograd.grad(((w - 3) ** 2).sum(), [w])
        nx.adam_step([w], [g], s)
    assert abs(w.item() - 3) < 0.05


def test_adam_shape_mismatch():
    with pytest.raises(nx.ShapeError):
        nx.adam_step([torch.zeros(2)], [torch.zeros(3)], nx.AdamState())


def test_plateau_schedule():
    s = nx.AdamState(lr=1.0)
    sched = nx.PlateauSchedule(s, factor=0.5, patience=5)
    assert sched.update(1.0)
    for _ in range(4):
        assert not sched.update(2.0)
    assert s.lr == 1.0
    sched.update(2.0)
    assert s.lr == 0.5
    assert sched.update(0.5) and s.lr == 0.5


def test_dropout_statistics():
    g = torch.Generator().manual_seed(7)
    x = torch.ones(1_000_000, dtype=torch.float64)
    y = nx.dropout(x, 0.1, True, g)
    assert abs((y == 0).double().mean().item() - 0.1) < 0.002
    assert abs(y.mean().item() - 1.0) < 0.005
    assert torch.equal(nx.dropout(x, 0.1, False), x)
    with pytest.raises(ValueError):
        nx.dropout(x, 1.0, True)
