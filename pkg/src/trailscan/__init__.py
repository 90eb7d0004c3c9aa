"""trailscan: satellite-trail simulation, segmentation, and line detection.

Subpackages are import-light; heavy dependencies (torch, numba) load on first
use of the module that needs them.  The most common entry points are
re-exported here.
"""

from .config import RunConfig, load_config
from .raster import BinaryMask, Raster, TileGrid, load_raster, make_tile_grid, save_raster

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Raster",
    "RunConfig",
    "TileGrid",
    "__version__",
    "load_config",
    "load_raster",
    "make_tile_grid",
    "save_raster",
]
