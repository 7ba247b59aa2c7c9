import numpy as np
import pytest

from hydra_wm.core import MLP, Linear, Tensor, make_rng
from hydra_wm.core.gradcheck import relative_error


def test_philox_determinism():
    a = make_rng(5).standard_normal(4)
    b = make_rng(5).standard_normal(4)
    assert a.tobytes() == b.tobytes()
    assert isinstance(make_rng(5).bit_generator, np.random.Philox)


def test_module_parameters_and_state_round_trip():
    m = MLP(3, 5, 2, make_rng(0))
    names = [n for n, _ in m.named_parameters()]
    assert names == ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]
    state = m.state_dict()
    m2 = MLP(3, 5, 2, make_rng(1))
    m2.load_state_dict(state)
    x = Tensor(np.ones((1, 3)))
    assert np.array_equal(m(x).data, m2(x).data)


def test_load_state_rejects_mismatch():
    m = Linear(3, 2, make_rng(0))
    with pytest.raises(KeyError):
        m.load_state_dict({"weight": np.zeros((3, 2))})


def test_zero_linear():
    lin = Linear(4, 3, make_rng(0), zero=True)
    assert np.all(lin(Tensor(np.ones((2, 4)))).data == 0)


def test_relative_error_definition():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.2 / 2.2)
    assert relative_error([0.0], [0.0]) == 0.0
