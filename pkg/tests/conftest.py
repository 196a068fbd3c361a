import numpy as np
import pytest

from modrobust import model as M
from modrobust import signal as S


def central_diff_grads(f, arrays, h=1e-6):
    """Central finite differences of scalar f(list of arrays) per array."""
    grads = []
    for ai, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))


@pytest.fixture(scope="session")
def desk_dataset():
    cfg = S.GeneratorConfig(
        classes=("BPSK", "QPSK", "PAM4", "GFSK"),
        snr_grid_db=(10.0,),
        frames_per_cell=200,
        seed=7,
    )
    return S.generate_dataset(cfg)


@pytest.fixture(scope="session")
def desk_split(desk_dataset):
    return S.split(desk_dataset, S.SplitSpec(0.5, seed=0))


@pytest.fixture(scope="session")
def trained_desk_model(desk_split):
    train, _ = desk_split
    m = M.build_model(M.student_arch(4, "desk"), 42)
    M.train_standard(m, train, M.TrainConfig(epochs=10, batch=64, lr=0.01, momentum=0.9, seed=1))
    return m
