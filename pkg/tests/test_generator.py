import numpy as np
import pytest
import torch

from raindropsep.core import compose, residual
from raindropsep.generator import IterativeGenerator, count_parameters, run_generator

# enumerated once from the default backbone (C=3, ngf=64, 9 residual blocks)
DEFAULT_PARAMETER_COUNT = 11_393_863


def small(n_iter=3, **kw):
    torch.manual_seed(0)
    kw.setdefault("ngf", 8)
    kw.setdefault("n_blocks", 1)
    return IterativeGenerator(3, n_iter, **kw)


def test_single_iteration_sees_zero_mask(monkeypatch):
    g = small(n_iter=1)
    seen = []
    original = g.step

    def spy(rainy, prev_mask):
        seen.append(prev_mask.clone())
        return original(rainy, prev_mask)

    monkeypatch.setattr(g, "step", spy)
    trace = g(torch.rand(2, 3, 16, 16))
    assert len(trace) == 1
    assert len(seen) == 1
    assert seen[0].shape == (2, 1, 16, 16)
    assert torch.count_nonzero(seen[0]) == 0


def test_later_iterations_receive_previous_mask(monkeypatch):
    g = small(n_iter=3)
    seen = []
    original = g.step
    monkeypatch.setattr(g, "step", lambda r, m: (seen.append(m), original(r, m))[1])
    trace = g(torch.rand(1, 3, 16, 16))
    for i in (1, 2):
        assert torch.equal(seen[i], trace.masks[i - 1])


def test_full_size_trace_shapes():
    g = small(n_iter=6)
    trace = run_generator(g, np.random.default_rng(0).random((3, 256, 256)))
    assert len(trace) == 6
    for b, r, a in zip(trace.backgrounds, trace.raindrops, trace.masks):
        assert b.shape == r.shape == (1, 3, 256, 256)
        assert a.shape == (1, 1, 256, 256)


def test_reconstructions_equal_composition():
    g = small()
    trace = run_generator(g, torch.rand(3, 32, 32))
    for triple, rec in zip(trace.triples(), trace.reconstructions):
        np.testing.assert_array_equal(compose(triple).data, rec[0].numpy())
        assert residual(compose(triple), triple) == 0.0


def test_deterministic_forward():
    x = torch.rand(2, 3, 32, 32)
    t1, t2 = small()(x), small()(x)
    for a, b in zip(t1.masks + t1.backgrounds, t2.masks + t2.backgrounds):
        assert torch.equal(a, b)


def test_masks_in_unit_interval():
    g = small(n_iter=4)
    for seed in range(3):
        torch.manual_seed(seed)
        trace = run_generator(g, torch.rand(2, 3, 24, 24) * 4 - 2)
        for m in trace.masks:
            assert m.min() >= 0 and m.max() <= 1


def test_parameter_count_independent_of_iterations():
    assert count_parameters(small(n_iter=1)) == count_parameters(small(n_iter=6))
    assert count_parameters(small(ngf=16)) > count_parameters(small(ngf=8))


def test_default_parameter_count():
    g = IterativeGenerator()
    assert g.n_iter == 6
    assert count_parameters(g) == DEFAULT_PARAMETER_COUNT
    assert count_parameters(g) == count_parameters(g.backbone)


def test_weight_sharing_accumulates_into_one_collection():
    g = small(n_iter=3)
    params = list(g.parameters())
    trace = g(torch.rand(1, 3, 16, 16))
    first = torch.autograd.grad(trace.backgrounds[0].sum(), params, retain_graph=True)
    last = torch.autograd.grad(trace.backgrounds[2].sum(), params)
    # every parameter receives gradient from both the first and the last pass
    assert all(torch.count_nonzero(a) > 0 for a in first)
    assert all(torch.count_nonzero(b) > 0 for b in last)
    assert {id(p) for p in params} == {id(p) for p in g.backbone.parameters()}


def test_feedback_path_changes_output():
    g = small()
    x = torch.rand(1, 3, 16, 16)
    mask = torch.rand(1, 1, 16, 16) * 0.5
    with torch.no_grad():
        out = g.step(x, mask)
        bumped = g.step(x, mask + 0.25)
    delta = sum((a - b).abs().max().item() for a, b in zip(out, bumped))
    assert delta > 0


@pytest.mark.parametrize("size", [(16, 18), (30, 32)])
def test_non_divisible_dims_rejected(size):
    with pytest.raises(ValueError, match="multiples of 4"):
        small()(torch.rand(1, 3, *size))


def test_channel_mismatch_rejected():
    with pytest.raises(ValueError, match="3 channels"):
        small()(torch.rand(1, 1, 16, 16))


def test_grayscale_generator():
    g = IterativeGenerator(1, 2, ngf=8, n_blocks=1)
    trace = run_generator(g, torch.rand(1, 16, 16))
    assert trace.backgrounds[0].shape == (1, 1, 16, 16)
