import numpy as np
import pytest
import torch

from lupi_affect.errors import ConfigurationError, ShapeError
from lupi_affect.models import (
    ModelSpec, build_model, conv_cascade_shapes, forward, load_checkpoint, parameter_count, parameter_hash,
    same_padding, save_checkpoint,
)


def spec(kind, task="classification", shape=(5, 32, 18), priv=32):
    return ModelSpec(kind, task, shape if kind != "privnet" else None, priv if kind in ("privnet", "fusionnet") else None)


def traced_shapes(model, x):
    shapes = []
    hooks = [m.register_forward_hook(lambda mod, i, o: shapes.append(tuple(o.shape[-2:])))
             for m in model.trunk.features if isinstance(m, (torch.nn.Conv2d, torch.nn.MaxPool2d))]
    model.eval()
    with torch.no_grad():
        model(pixels=x)
    for h in hooks:
        h.remove()
    return shapes


@pytest.mark.parametrize("h,w", [(32, 18), (320, 180), (17, 9), (64, 36)])
def test_cascade_shapes_match_traced_forward(h, w):
    model = build_model(spec("pixelnet", shape=(5, h, w)))
    got = traced_shapes(model, torch.zeros(2, 5, h, w))
    assert got == [(hh, ww) for _, hh, ww in conv_cascade_shapes(h, w)]


def test_known_shapes():
    assert conv_cascade_shapes(32, 18)[-1] == ("pool4", 1, 1)
    assert conv_cascade_shapes(320, 180)[-1] == ("pool4", 5, 3)
    assert same_padding(18, 5, 2) == (1, 2)


@pytest.mark.parametrize("kind", ["pixelnet", "studentnet", "privnet", "fusionnet"])
@pytest.mark.parametrize("task", ["classification", "regression"])
def test_output_shapes(kind, task):
    model = build_model(spec(kind, task), seed=0)
    out = forward(model, torch.rand(7, 5, 32, 18), torch.randn(7, 32))
    assert out.penultimate.shape == (7, 96)
    if task == "classification":
        assert out.output.shape == (7, 2)
        assert torch.allclose(out.probabilities.sum(1), torch.ones(7))
    else:
        assert out.output.shape == (7,) and out.probabilities is None


def test_student_and_pixelnet_are_architecture_identical():
    a, b = build_model(spec("pixelnet"), 3), build_model(spec("studentnet"), 3)
    assert parameter_count(a) == parameter_count(b)
    assert parameter_hash(a) == parameter_hash(b)


def test_fusion_concatenates_two_96_streams():
    model = build_model(spec("fusionnet"))
    assert model.fusion.in_features == 192 and model.fusion.out_features == 96


def test_seeded_init_is_deterministic_and_bounded():
    a, b, c = (build_model(spec("fusionnet"), s) for s in (1, 1, 2))
    assert parameter_hash(a) == parameter_hash(b) != parameter_hash(c)
    w = a.fusion.weight
    assert w.abs().max() <= 1 / np.sqrt(192)


def test_dropout_zeroes_a_tenth_of_active_units():
    torch.manual_seed(0)
    model = build_model(spec("pixelnet"), 0)
    x = torch.rand(2048, 5, 32, 18)
    model.eval()
    with torch.no_grad():
        active = model(pixels=x).penultimate > 0
        model.train()
        dropped = model(pixels=x).penultimate == 0
    frac = (dropped & active).sum().item() / active.sum().item()
    assert abs(frac - 0.10) < 0.01


def test_eval_mode_is_deterministic():
    model = build_model(spec("pixelnet"), 0)
    x = torch.rand(4, 5, 32, 18)
    assert torch.equal(forward(model, x).output, forward(model, x).output)


def test_shape_errors():
    with pytest.raises(ShapeError):
        build_model(spec("pixelnet", shape=(5, 0, 18)))
    model = build_model(spec("pixelnet"))
    with pytest.raises(ShapeError):
        forward(model, torch.rand(2, 5, 18, 32))
    with pytest.raises(ShapeError):
        forward(model)
    priv = build_model(spec("privnet"))
    with pytest.raises(ShapeError):
        forward(priv, privileged=torch.rand(2, 31))
    with pytest.raises(ConfigurationError):
        ModelSpec("privnet", "classification")
    with pytest.raises(ConfigurationError):
        ModelSpec("resnet", "classification", (5, 32, 18))


def test_checkpoint_round_trip(tmp_path):
    model = build_model(spec("fusionnet", "regression"), 5)
    save_checkpoint(tmp_path / "m.pt", model, {"cell": "x"})
    back, meta = load_checkpoint(tmp_path / "m.pt", expected_spec=model.spec)
    assert meta == {"cell": "x"}
    assert parameter_hash(back) == parameter_hash(model)
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path / "m.pt", expected_spec=spec("fusionnet"))
