"""Dense per-site scratch arrays for the Monte Carlo kernels.

Sites of a cube around the origin are stored in 8x8x8 bricks so that a random
walk, which moves locally, touches few cache lines.  Every cell holds -1 when
unused; kernels must restore -1 for every cell they write.
"""

import numba as nb
import numpy as np

_BRICK = 8
MAX_CELLS = 2**29  # 2 GiB of int32


@nb.njit(cache=True, inline="always")
def cell(x, y, z, off, nbricks):
    x += off
    y += off
    z += off
    return ((((x >> 3) * nbricks + (y >> 3)) * nbricks + (z >> 3)) << 9) | ((x & 7) << 6) | ((y & 7) << 3) | (z & 7)


class SiteGrid:
    """Scratch grid covering every site with sup-norm at most ``reach``."""

    def __init__(self, reach: int):
        nbricks = (2 * reach + 2 * _BRICK) // _BRICK + 1
        if nbricks**3 * 512 > MAX_CELLS:
            raise MemoryError(f"site grid for reach {reach} exceeds {MAX_CELLS} cells")
        self.reach = reach
        self.nbricks = nbricks
        self.off = (nbricks // 2) * _BRICK
        self.cells = np.full(nbricks**3 * 512, -1, dtype=np.int32)

    def args(self):
        return self.cells, self.off, self.nbricks


_cache: dict[str, SiteGrid] = {}


def site_grid(radius: float) -> SiteGrid:
    """Shared scratch grid large enough for walks stopped at ``radius`` (plus one step)."""
    need = int(np.ceil(radius)) + 2
    g = _cache.get("grid")
    if g is None or g.reach < need:
        _cache.pop("grid", None)
        g = SiteGrid(max(need, 16))
        _cache["grid"] = g
    return g
