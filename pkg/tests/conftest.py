import numpy as np
import pytest

from rscw.code import build_code
from rscw.neural import default_spec, encode_syndromes, quantize
from rscw.noise import NoiseParams, generate_batch
from rscw.training import TrainConfig, train_both

P_TRAIN = 0.004


@pytest.fixture(scope="session")
def code3():
    return build_code(3)


@pytest.fixture(scope="session")
def trained_l3(code3):
    """Float and quantised L=3, T=3 networks trained at p=0.004 (about 90 s)."""
    spec = default_spec(3)
    params = NoiseParams.uniform(P_TRAIN)
    batch = generate_batch(code3, params, 3, 200_000, 11)
    cfg = TrainConfig(batch_size=1000, epochs=5, learning_rate=0.003, seed=1)
    trained = train_both(code3, spec, batch, cfg)
    cal = generate_batch(code3, params, 3, 10_000, 21)
    floats, quants = {}, {}
    for t, (w, _) in trained.items():
        floats[t] = (spec, w)
        quants[t] = (spec, quantize(spec, w, encode_syndromes(code3, cal.syn[t], t)))
    return {"spec": spec, "float": floats, "quant": quants,
            "history": {t: h for t, (_, h) in trained.items()}}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
