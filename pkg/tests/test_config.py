import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wrvi import config as cfgmod
from wrvi.config import ConfigError


@pytest.mark.parametrize("name", cfgmod.bundled_names())
def test_bundled_configs_round_trip(name):
    cfg = cfgmod.bundled(name)
    text = cfgmod.dumps(cfg)
    again = cfgmod.loads(text)
    assert again == cfg
    assert cfgmod.dumps(again) == text


def test_bundled_names():
    names = cfgmod.bundled_names()
    for expected in ("linear_poisson", "nonlinear_poisson", "heat", "wave", "observe"):
        assert expected in names
    with pytest.raises(ConfigError):
        cfgmod.bundled("no_such_config")


@pytest.mark.parametrize("path,patch", [
    ("problem.kindd", lambda d: d["problem"].__setitem__("kindd", "x")),
    ("training.iteratons", lambda d: d["training"].__setitem__("iteratons", 5)),
    ("problem.z_prior[0].sigma", lambda d: d["problem"]["z_prior"][0].__setitem__("sigma", 1.0)),
    ("extra", lambda d: d.__setitem__("extra", 1)),
])
def test_unknown_keys_name_the_field(path, patch):
    d = json.loads(cfgmod.dumps(cfgmod.bundled("nonlinear_poisson_desk")))
    patch(d)
    with pytest.raises(ConfigError) as info:
        cfgmod.loads(json.dumps(d))
    assert info.value.path == path


@pytest.mark.parametrize("path,patch", [
    ("problem.kind", lambda d: d["problem"].__setitem__("kind", "cubic")),
    ("problem.eps_u", lambda d: d["problem"].__setitem__("eps_u", 0.0)),
    ("observation.sigma_y", lambda d: d["observation"].__setitem__("sigma_y", -1.0)),
    ("training.iterations", lambda d: d["training"].__setitem__("iterations", "many")),
])
def test_invalid_values_are_rejected(path, patch):
    d = json.loads(cfgmod.dumps(cfgmod.bundled("linear_poisson_desk")))
    patch(d)
    with pytest.raises(ConfigError) as info:
        cfgmod.loads(json.dumps(d))
    assert info.value.path.startswith(path.split(".")[0])


def test_malformed_json():
    with pytest.raises(ConfigError):
        cfgmod.loads("{")


@settings(max_examples=50, deadline=None)
@given(iters=st.integers(0, 10 ** 6), lr=st.floats(1e-6, 1.0), n=st.integers(1, 64),
       hidden=st.lists(st.integers(1, 256), min_size=1, max_size=5), eps=st.floats(1e-6, 1.0))
def test_round_trip_fixed_point(iters, lr, n, hidden, eps):
    cfg = cfgmod.bundled("linear_poisson_desk")
    cfg.training.iterations = iters
    cfg.training.learning_rate = lr
    cfg.training.n_samples = n
    cfg.network.hidden = hidden
    cfg.problem.eps_u = eps
    assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg
