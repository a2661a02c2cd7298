"""Sample DSL kits (structured grid, unstructured grid, particles) and their oracles."""

from .baseline import BaselineResult, handwritten_baseline
from .common import merge_finalize, records_checksum
from .particle import ParticleApp, ParticleParams, make_app as make_particle_app, particle_kernel
from .sgrid import SGridApp, SGridParams, make_app as make_sgrid_app, sgrid_kernel
from .usgrid import (
    USGridApp,
    USGridParams,
    caser_topology,
    make_app as make_usgrid_app,
    usgrid_kernel,
)

__all__ = [
    "BaselineResult",
    "handwritten_baseline",
    "merge_finalize",
    "records_checksum",
    "SGridApp",
    "SGridParams",
    "sgrid_kernel",
    "make_sgrid_app",
    "USGridApp",
    "USGridParams",
    "usgrid_kernel",
    "caser_topology",
    "make_usgrid_app",
    "ParticleApp",
    "ParticleParams",
    "particle_kernel",
    "make_particle_app",
]


def make_app(kit: str, params):
    if kit == "sgrid":
        return make_sgrid_app(params)
    if kit in ("usgrid-c", "usgrid-r", "usgrid"):
        return make_usgrid_app(params)
    if kit == "particle":
        return make_particle_app(params)
    raise ValueError(f"unknown kit {kit!r}")
