import numpy as np
import pytest
import torch
from hypothesis import settings

from posegan.autodiff import set_precision

settings.register_profile("posegan", max_examples=40, deadline=None)
settings.load_profile("posegan")


@pytest.fixture(autouse=True)
def _float64():
    set_precision("float64")
    yield
    set_precision("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def t64(x):
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=torch.float64)


TINY = dict(m=4, n=6, segment_len=12, frame_stride=2, epochs=2, batch_size=4, k_disc_iters=2, lr=1e-3,
            gen_hidden=8, disc_width=16, disc_depth=3, quality_hidden=8, latent={"dim": 4},
            n_selection=2, n_validation=4, selection_warmup_epochs=1, cls_epochs=3, cls_batch_size=8)


@pytest.fixture
def tiny_config():
    from posegan.training import TrainConfig

    def make(**kw):
        return TrainConfig(**{**TINY, **kw})
    return make


@pytest.fixture(scope="session")
def tiny_run():
    """One small trained GAN shared by the io, estimator and CLI tests."""
    from posegan.skeleton import make_synthetic_dataset
    from posegan.training import TrainConfig, train_gan
    set_precision("float64")
    clips = make_synthetic_dataset(16, 2, T=24, seed=5)
    return clips, train_gan(clips, TrainConfig(**TINY))
