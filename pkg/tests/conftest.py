import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hmeqa import tensor as T  # noqa: E402
from hmeqa.config import TINY, ModelConfig  # noqa: E402
from hmeqa.data import SampleRecord  # noqa: E402
from hmeqa.encoders import EncodedSequence  # noqa: E402
from hmeqa.model import build_params  # noqa: E402
from hmeqa.params import ParameterSet  # noqa: E402


def tiny_config(**changes):
    return ModelConfig(**{**TINY, **changes})


def randomize(params, rng, low=-1.0, high=1.0, prefix=""):
    """Overwrite every parameter under ``prefix`` with uniform noise."""
    for name, t in params.items():
        if name.startswith(prefix):
            t.data = rng.uniform(low, high, size=t.shape)
    return params


def subset(params, prefix):
    """A ParameterSet view holding only the tensors whose name starts with ``prefix``."""
    out = ParameterSet()
    for name, t in params.items():
        if name.startswith(prefix):
            out._tensors[name] = t
    return out


def random_sequence(rng, batch, n, dim, lengths=None, requires_grad=False):
    """Random ``EncodedSequence`` with zeroed rows past each length."""
    lengths = rng.integers(1, n + 1, size=batch) if lengths is None else np.asarray(lengths)
    x = rng.uniform(-1, 1, size=(batch, n, dim))
    x[np.arange(n)[None, :] >= lengths[:, None]] = 0.0
    return EncodedSequence(T.Tensor(x, requires_grad=requires_grad), lengths.astype(np.intp))


def random_records(rng, count, task="open", max_frames=4, max_words=3, vocab=19, dim=10,
                   num_classes=10, num_choices=4):
    """Variable-length records with arbitrary real features (not the recall task)."""
    out = []
    for k in range(count):
        n_v = int(rng.integers(1, max_frames + 1))
        n_q = int(rng.integers(1, max_words + 1))
        rec = SampleRecord(
            id=f"r{k}",
            appearance=rng.normal(size=(n_v, dim)),
            motion=rng.normal(size=(n_v, dim)),
            question=[int(t) for t in rng.integers(1, vocab, size=n_q)],
            task=task,
            answer=int(rng.integers(0, num_classes)),
        )
        if task == "mc":
            rec.candidates = [[int(rng.integers(1, vocab))] for _ in range(num_choices)]
            rec.positive = int(rng.integers(0, num_choices))
        out.append(rec)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_params():
    return build_params(tiny_config())


@pytest.fixture(autouse=True)
def _float64():
    with T.default_dtype("float64"):
        yield
