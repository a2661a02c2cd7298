import numpy as np
import pytest

from blockrt import kern
from blockrt.dslkits.particle import ParticleParams
from blockrt.dslkits.sgrid import SGridParams
from blockrt.dslkits.usgrid import USGridParams

SMALL_POOL = dict(pool_bytes=1 << 24, chunk_bytes=4096)


def small_sgrid(**kw):
    base = dict(
        region=(64, 64), block=(32, 32), items_per_page=32, loops=5,
        init="random", seed=3, **SMALL_POOL,
    )
    base.update(kw)
    return SGridParams(**base)


def small_usgrid(**kw):
    base = dict(
        region=(32, 32), block=(16, 16), items_per_page=16, loops=3,
        init="random", seed=5, **SMALL_POOL,
    )
    base.update(kw)
    return USGridParams(**base)


def small_particle(**kw):
    base = dict(
        region=(16, 16), block=(8, 8), n_particles=512, loops=3, dt=1e-4,
        init="random", seed=2, pool_bytes=1 << 25, chunk_bytes=16384,
    )
    base.update(kw)
    return ParticleParams(**base)


@pytest.fixture(params=["python"] + (["compiled"] if kern.compiled is not None else []))
def impl_name(request):
    return request.param


def checksum_of(report):
    from blockrt.dslkits import merge_finalize

    return merge_finalize(report.finalize_results)["checksum"]
