import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from primassembly.exceptions import ConfigError, InsufficientInputError, InvalidInputError
from primassembly.geometry import Assembly, assembly_surface, is_canonical
from primassembly.inference import SamplingConfig, generate, generate_batch, step_logits
from primassembly.model import PrimitiveTransformer
from primassembly.tokenization import Discretizer, is_sorted

from conftest import random_primitive, tiny_model_config

LEVELS = np.array([3, 128, 128, 128, 180, 180, 180, 128, 128, 128])


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(7)
    return PrimitiveTransformer(tiny_model_config()).eval()


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(3)
    a = Assembly(tuple(random_primitive(rng) for _ in range(3)))
    return assembly_surface(a, 500, rng).points


def _force_eos(model, logit):
    """Copy of ``model`` whose EOS head outputs the constant ``logit``."""
    clone = PrimitiveTransformer(model.cfg)
    clone.load_state_dict(model.state_dict())
    last = clone.decoder.eos_head[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.fill_(logit)
    return clone.eval()


def test_max_len_zero_gives_empty(model, cloud):
    res = generate(cloud, model, SamplingConfig(max_len=0))
    assert len(res.assembly) == 0
    assert res.tokens.shape == (0, 10)
    assert res.terminated_by_limit and not res.terminated_by_eos


def test_runs_to_limit_without_eos(model, cloud):
    res = generate(cloud, _force_eos(model, -20.0), SamplingConfig(max_len=5))
    assert len(res.assembly) == 5
    assert res.terminated_by_limit and not res.terminated_by_eos
    assert len(res.eos_probabilities) == 5


def test_stops_immediately_on_eos(model, cloud):
    res = generate(cloud, _force_eos(model, 20.0), SamplingConfig(max_len=5))
    assert len(res.assembly) == 0
    assert res.terminated_by_eos and not res.terminated_by_limit


@pytest.mark.parametrize("mode", ["greedy", "temperature", "top-k"])
def test_tokens_in_range_and_primitives_valid(model, cloud, mode):
    res = generate(cloud, _force_eos(model, -20.0), SamplingConfig(mode=mode, max_len=6, k=5, seed=1))
    assert np.all(res.tokens >= 0) and np.all(res.tokens < LEVELS)
    assert all(p.is_valid() for p in res.assembly)


def test_greedy_is_deterministic(model, cloud):
    sc = SamplingConfig(max_len=6, eos_threshold=0.99)
    a = generate(cloud, model, sc)
    b = generate(cloud, model, sc)
    assert np.array_equal(a.tokens, b.tokens)
    assert a.eos_probabilities == b.eos_probabilities


def test_stochastic_modes_seeded(model, cloud):
    m = _force_eos(model, -20.0)
    runs = [generate(cloud, m, SamplingConfig(mode="temperature", temperature=5.0, max_len=4, seed=s)).tokens for s in (1, 1, 2)]
    assert np.array_equal(runs[0], runs[1])
    assert not np.array_equal(runs[0], runs[2])


def test_top1_equals_greedy(model, cloud):
    m = _force_eos(model, -20.0)
    greedy = generate(cloud, m, SamplingConfig(max_len=4))
    top1 = generate(cloud, m, SamplingConfig(mode="top-k", k=1, max_len=4, seed=9))
    assert np.array_equal(greedy.tokens, top1.tokens)


def test_prefix_consistency(model, cloud):
    m = _force_eos(model, -20.0)
    full = generate(cloud, m, SamplingConfig(max_len=6))
    for k in range(1, 5):
        cont = generate(cloud, m, SamplingConfig(max_len=6), prefix=full.tokens[:k])
        assert np.array_equal(cont.tokens, full.tokens)
    # step logits are causal: forcing the full sequence reproduces every step's EOS probability
    logits = step_logits(cloud, model, full.tokens)
    greedy = generate(cloud, model, SamplingConfig(max_len=6, eos_threshold=0.999999))
    n = len(greedy.eos_probabilities)
    forced = torch.sigmoid(step_logits(cloud, model, greedy.tokens)["eos"]).numpy()[:n]
    assert np.allclose(forced, greedy.eos_probabilities, atol=1e-5)
    assert logits["class"].shape == (7, 3)


def test_batch_matches_single(model, cloud):
    rng = np.random.default_rng(4)
    other = assembly_surface(Assembly((random_primitive(rng),)), 300, rng).points
    sc = SamplingConfig(max_len=5, eos_threshold=0.99)
    batch = generate_batch([cloud, other], model, sc)
    for c, r in zip([cloud, other], batch):
        single = generate(c, model, sc)
        assert np.array_equal(single.tokens, r.tokens)


def test_recanonicalize(model, cloud):
    res = generate(cloud, _force_eos(model, -20.0), SamplingConfig(max_len=6, recanonicalize=True))
    assert all(is_canonical(p) for p in res.assembly)
    assert is_sorted(res.assembly)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 8), st.floats(0.05, 0.95))
def test_terminates_within_max_len(max_len, threshold):
    torch.manual_seed(0)
    m = PrimitiveTransformer(tiny_model_config())
    pts = np.random.default_rng(max_len).normal(size=(40, 3)) * 0.3
    res = generate(pts, m, SamplingConfig(max_len=max_len, eos_threshold=threshold))
    assert len(res.assembly) <= max_len
    assert res.terminated_by_eos != res.terminated_by_limit


def test_config_errors():
    with pytest.raises(ConfigError):
        SamplingConfig(mode="beam")
    with pytest.raises(ConfigError):
        SamplingConfig(temperature=0)
    with pytest.raises(ConfigError):
        SamplingConfig(k=0)
    with pytest.raises(ConfigError):
        SamplingConfig(eos_threshold=1.0)
    with pytest.raises(ConfigError):
        SamplingConfig(max_len=-1)


def test_discretizer_mismatch(model, cloud):
    with pytest.raises(ConfigError):
        generate(cloud, model, discretizer=Discretizer(rotation_levels=90))


def test_bad_clouds(model):
    with pytest.raises(InsufficientInputError):
        generate(np.zeros((3, 3)), model)
    with pytest.raises(InvalidInputError):
        generate(np.zeros((10, 2)), model)
    with pytest.raises(InvalidInputError):
        generate(np.full((10, 3), np.nan), model)
