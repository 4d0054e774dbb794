"""Two-photon edge states in photonic topological lattices under disorder."""

__version__ = "0.1.0"

from .biphoton import (  # noqa: F401
    BiphotonState,
    StateRecipe,
    TwoPhotonEigenbasis,
    named_recipe,
    project_edge_edge,
    reduced_density,
    schmidt_number,
    spatial_map,
    spectral_map,
    template_state,
)
from .lattice import DisorderSpec, HaldaneSpec, QheSpec, apply_disorder, build_haldane, build_qhe  # noqa: F401
from .spectral import bulk_gap, classify_haldane, classify_qhe, diagonalize  # noqa: F401
