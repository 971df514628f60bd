"""depthfuse: gradient-domain fusion of low- and high-resolution depth maps.

Fuses a value-accurate low-resolution depth map with a detail-rich
high-resolution one, via guided filtering, explicit Poisson compositing, or
a small self-supervised fusion network.
"""

__version__ = "0.1.0"

from .errors import DepthFuseError
from .gradops import edge_map, guided_filter, guided_fuse, sobel
from .kernels import backend_name
from .poisson import FusionMask, mask_from_edges, poisson_fuse
from .raster import (
    DepthMap,
    DepthSemantics,
    Raster,
    minmax_scale,
    read_pfm,
    resize_bilinear,
    write_pfm,
)

__all__ = [
    "__version__",
    "backend_name",
    "DepthFuseError",
    "DepthMap",
    "DepthSemantics",
    "FusionMask",
    "Raster",
    "edge_map",
    "guided_filter",
    "guided_fuse",
    "mask_from_edges",
    "minmax_scale",
    "poisson_fuse",
    "read_pfm",
    "resize_bilinear",
    "sobel",
    "write_pfm",
]
