import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lupi_affect.errors import ConfigurationError
from lupi_affect.losses import (
    LupiLossConfig, cosine_distance, cross_entropy, kl_divergence, student_loss, student_loss_classification,
    student_loss_regression,
)
from lupi_affect.models import ForwardOutput

F64 = torch.float64


def np_softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------ numpy oracles


def oracle_ce(p, y):
    return -np.log(np.maximum(p[np.arange(len(y)), y], 1e-12))


def oracle_kl(p, q):
    p, q = np.maximum(p, 1e-12), np.maximum(q, 1e-12)
    return np.sum(p * np.log(p / q), axis=-1)


def oracle_cos(u, v):
    out = []
    for a, b in zip(u, v):
        na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
        out.append(1.0 if na <= 1e-12 or nb <= 1e-12 else 1.0 - sum(x * y for x, y in zip(a, b)) / (na * nb))
    return np.array(out)


def test_terms_match_oracles(rng):
    p = np_softmax(rng.normal(size=(50, 2)))
    q = np_softmax(rng.normal(size=(50, 2)))
    y = rng.integers(0, 2, 50)
    assert np.allclose(cross_entropy(torch.tensor(p), torch.tensor(y)).numpy(), oracle_ce(p, y), rtol=1e-12)
    assert np.allclose(kl_divergence(torch.tensor(p), torch.tensor(q)).numpy(), oracle_kl(p, q), rtol=1e-10, atol=1e-15)
    u, v = rng.normal(size=(50, 96)), rng.normal(size=(50, 96))
    assert np.allclose(cosine_distance(torch.tensor(u), torch.tensor(v)).numpy(), oracle_cos(u, v), atol=1e-12)


def test_kl_direction_is_teacher_to_student():
    teacher = torch.tensor([[0.9, 0.1]], dtype=F64)
    student = torch.tensor([[0.6, 0.4]], dtype=F64)
    loss = student_loss_classification(student, teacher, torch.tensor([0]), alpha=1.0)
    assert loss.item() == pytest.approx(0.9 * math.log(0.9 / 0.6) + 0.1 * math.log(0.1 / 0.4))


def test_floors_keep_losses_finite():
    p = torch.tensor([[1.0, 0.0]], dtype=F64)
    assert torch.isfinite(cross_entropy(p, torch.tensor([1]))).all()
    assert cross_entropy(p, torch.tensor([1])).item() == pytest.approx(-math.log(1e-12))
    assert torch.isfinite(kl_divergence(torch.tensor([[0.0, 1.0]], dtype=F64), p)).all()


def test_degenerate_cosine_is_one():
    z = torch.zeros(1, 4, dtype=F64)
    assert cosine_distance(z, torch.ones(1, 4, dtype=F64)).item() == 1.0
    assert cosine_distance(z, z).item() == 1.0


@given(arrays(np.float64, (2, 2), elements=st.floats(-20, 20)))
def test_kl_nonnegative_and_zero_on_identity(z):
    p = torch.tensor(np_softmax(z))
    q = torch.tensor(np_softmax(z[::-1].copy()))
    assert (kl_divergence(p, q) >= -1e-12).all()
    assert torch.allclose(kl_divergence(p, p), torch.zeros(2, dtype=F64), atol=1e-12)


@given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)), arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
def test_cosine_distance_in_range(u, v):
    d = cosine_distance(torch.tensor(u), torch.tensor(v))
    assert ((d >= 0) & (d <= 2)).all()


# --------------------------------------------------------- endpoint exactness


def random_cls_batch(gen, n):
    logits = torch.randn(n, 2, generator=gen, dtype=F64) * 3
    teacher = torch.softmax(torch.randn(n, 2, generator=gen, dtype=F64) * 3, dim=1)
    y = torch.randint(0, 2, (n,), generator=gen)
    return torch.softmax(logits, dim=1), teacher, y


def random_reg_batch(gen, n):
    out = torch.randn(n, generator=gen, dtype=F64)
    penult = torch.relu(torch.randn(n, 96, generator=gen, dtype=F64))
    tpen = torch.relu(torch.randn(n, 96, generator=gen, dtype=F64))
    y = torch.rand(n, generator=gen, dtype=F64) * 2 - 1
    return ForwardOutput(out, penult, None), tpen, y


def test_endpoints_bit_exact_on_1000_inputs():
    gen = torch.Generator().manual_seed(0)
    for _ in range(1000):
        n = int(torch.randint(1, 65, (1,), generator=gen))
        p, t, y = random_cls_batch(gen, n)
        ce = cross_entropy(p, y).mean()
        kl = kl_divergence(t, p).mean()
        assert student_loss_classification(p, t, y, 0.0).item() == ce.item()
        assert student_loss_classification(p, t, y, 1.0).item() == kl.item()
        s, tp, y = random_reg_batch(gen, n)
        mse = ((s.output - y) ** 2).mean()
        cs = cosine_distance(s.penultimate, tp).mean()
        assert student_loss_regression(s, tp, y, 0.0).item() == mse.item()
        assert student_loss_regression(s, tp, y, 1.0).item() == cs.item()


def test_alpha_outside_unit_interval_rejected():
    p, t, y = random_cls_batch(torch.Generator().manual_seed(1), 4)
    with pytest.raises(ConfigurationError):
        student_loss_classification(p, t, y, 1.5)
    with pytest.raises(ConfigurationError):
        LupiLossConfig("classification", -0.1)


def test_penultimate_dimension_mismatch_is_an_error():
    s = ForwardOutput(torch.zeros(2, dtype=F64), torch.ones(2, 96, dtype=F64), None)
    with pytest.raises(ConfigurationError):
        student_loss_regression(s, torch.ones(2, 64, dtype=F64), torch.zeros(2, dtype=F64), 0.5)


def test_config_defaults_and_dispatch():
    cls = LupiLossConfig("classification", 0.25)
    assert (cls.distance, cls.student_layer, cls.teacher_layer) == ("kl", "output", "output")
    reg = LupiLossConfig("regression", 0.25)
    assert (reg.distance, reg.student_layer) == ("cosine", "penultimate")
    with pytest.raises(ConfigurationError):
        LupiLossConfig("regression", 0.5, distance="kl")
    gen = torch.Generator().manual_seed(3)
    s, tp, y = random_reg_batch(gen, 8)
    loss, parts = student_loss(reg, s, ForwardOutput(None, tp, None), y)
    assert loss.item() == pytest.approx(student_loss_regression(s, tp, y, 0.25).item(), rel=1e-15)
    assert parts["distance"].item() == pytest.approx(cosine_distance(s.penultimate, tp).mean().item())


def test_custom_distance_hook():
    l1 = lambda a, b: (a - b).abs().sum(-1)  # noqa: E731
    cfg = LupiLossConfig("regression", 1.0, distance="custom", custom_distance=l1)
    s = ForwardOutput(torch.zeros(2, dtype=F64), torch.ones(2, 3, dtype=F64), None)
    loss, _ = student_loss(cfg, s, ForwardOutput(None, torch.zeros(2, 3, dtype=F64), None), torch.zeros(2, dtype=F64))
    assert loss.item() == 3.0


# --------------------------------------------------------- finite differences


class TinyNet(torch.nn.Module):
    """4 -> 8 -> 6 (penultimate) -> head; smooth activations, under 500 parameters."""

    def __init__(self, n_out, seed):
        super().__init__()
        torch.manual_seed(seed)
        self.a = torch.nn.Linear(4, 8).double()
        self.b = torch.nn.Linear(8, 6).double()
        self.out = torch.nn.Linear(6, n_out).double()

    def forward(self, x):
        pen = torch.tanh(self.b(torch.tanh(self.a(x))))
        logits = self.out(pen)
        if logits.shape[1] == 2:
            return ForwardOutput(logits, pen, torch.softmax(logits, dim=1))
        return ForwardOutput(logits[:, 0], pen, None)


def fd_check(model, loss_fn, h=1e-6):
    params = list(model.parameters())
    model.zero_grad()
    loss_fn().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).clone()
    numeric = torch.empty_like(analytic)
    k = 0
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                numeric[k] = (up - down) / (2 * h)
                k += 1
    return analytic, numeric


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_central_differences(seed):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(16, 4, generator=gen, dtype=F64)
    alpha = float(torch.rand(1, generator=gen))

    cls = TinyNet(2, seed)
    assert sum(p.numel() for p in cls.parameters()) <= 500
    teacher = torch.softmax(torch.randn(16, 2, generator=gen, dtype=F64), dim=1)
    y = torch.randint(0, 2, (16,), generator=gen)
    a, n = fd_check(cls, lambda: student_loss_classification(cls(x), teacher, y, alpha))
    assert torch.allclose(a, n, rtol=1e-4, atol=1e-9)

    reg = TinyNet(1, seed)
    tpen = torch.randn(16, 6, generator=gen, dtype=F64)
    target = torch.randn(16, generator=gen, dtype=F64)
    a, n = fd_check(reg, lambda: student_loss_regression(reg(x), tpen, target, alpha))
    assert torch.allclose(a, n, rtol=1e-4, atol=1e-9)
