import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spikegs.splat import GaussianCloud, PinholeCamera

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_cloud(rng, n, spread=0.6, scale=(0.05, 0.3), opacity=(0.3, 0.9)):
    pos = rng.uniform(-spread, spread, size=(n, 3))
    log_s = np.log(rng.uniform(*scale, size=(n, 3)))
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    opac = rng.uniform(*opacity, size=n)
    inten = rng.uniform(0.1, 0.9, size=n)
    return GaussianCloud(pos, log_s, q, np.log(opac / (1 - opac)), np.log(inten / (1 - inten)))


def front_camera(size=32, focal=None, distance=3.0, eye=None):
    focal = focal if focal is not None else float(size)
    eye = (0.3, -distance, 0.2) if eye is None else eye
    return PinholeCamera.look_at(eye, (0.0, 0.0, 0.0), fx=focal, fy=focal, cx=(size - 1) / 2,
                                 cy=(size - 1) / 2, width=size, height=size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
