"""Point sources on the unit cube and their mapping to scheme inputs.

The Sobol generator uses 32-bit direction numbers read from a plain-text
table shipped with the package (``data/new-joe-kuo-6.2048.txt``). The table
has one dimension per line: ``d s a m_1 ... m_s`` where ``s`` is the degree of
the primitive polynomial, ``a`` encodes its inner coefficients and ``m_i``
are the initial direction integers. Dimension 1 is implicit (all ``m = 1``).

Point ``i`` of a source is a pure function of ``i``; index 0 (the origin for
Sobol) is never used.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import ndtri

BITS = 32
SCHEMES = ("euler", "nv", "nvd", "nvg")


def _read_table():
    text = resources.files("nvsplit").joinpath("data/new-joe-kuo-6.2048.txt").read_text()
    rows = []
    for line in text.splitlines():
        if not line or line.startswith("#") or line.startswith("d "):
            continue
        d, s, a, *m = (int(v) for v in line.split())
        if len(m) != s:
            raise ValueError(f"direction-number row for dimension {d} has {len(m)} entries, expected {s}")
        rows.append((s, a, m))
    return rows


@lru_cache(maxsize=None)
def direction_numbers(dim: int) -> np.ndarray:
    """``(dim, BITS)`` array of direction numbers ``v_k`` scaled to 32 bits."""
    rows = _read_table()
    if dim > len(rows) + 1:
        raise ValueError(f"Sobol dimension {dim} exceeds the {len(rows) + 1} dimensions of the direction-number table")
    v = np.zeros((dim, BITS), dtype=np.uint64)
    v[0] = [1 << (BITS - 1 - k) for k in range(BITS)]
    for j in range(1, dim):
        s, a, m0 = rows[j - 1]
        m = list(m0)
        for k in range(s, BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        v[j] = [m[k] << (BITS - 1 - k) for k in range(BITS)]
    v = v.astype(np.uint32)
    v.flags.writeable = False
    return v


def _ctz(i: np.ndarray) -> np.ndarray:
    low = i & -i
    return (np.frexp(low.astype(float))[1] - 1).astype(np.intp)


class SobolSequence:
    """Unscrambled Sobol points in gray-code order, addressed by absolute index."""

    kind = "sobol"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = dim
        self._v = direction_numbers(dim)

    def integers(self, start: int, count: int, cols=None) -> np.ndarray:
        if start < 0 or count < 1:
            raise ValueError("need start >= 0 and count >= 1")
        if start + count > 2**BITS:
            raise ValueError("index range exceeds 2**32 points")
        v = self._v if cols is None else self._v[cols]
        gray = start ^ (start >> 1)
        first = np.zeros(v.shape[0], dtype=np.uint32)
        for b in range(BITS):
            if (gray >> b) & 1:
                first ^= v[:, b]
        inc = np.empty((count, v.shape[0]), dtype=np.uint32)
        inc[0] = first
        if count > 1:
            idx = np.arange(start + 1, start + count, dtype=np.int64)
            inc[1:] = v[:, _ctz(idx)].T
        return np.bitwise_xor.accumulate(inc, axis=0)

    def uniforms(self, start: int, count: int, cols=None) -> np.ndarray:
        """``(count, dim)`` points with absolute indices ``start .. start+count-1``."""
        return self.integers(start, count, cols) * (1.0 / 2**BITS)

    def describe(self) -> str:
        return "sobol/joe-kuo-6.21201"


class PseudoRandomSource:
    """Seeded pseudo-random points with the same index addressing as :class:`SobolSequence`.

    Rows are produced in blocks of ``BLOCK`` indices, each block from its own
    child seed, so any index range is reproducible regardless of chunking.
    """

    kind = "mc"
    BLOCK = 4096

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = int(seed)

    def _block(self, b: int) -> np.ndarray:
        ss = np.random.SeedSequence(self.seed, spawn_key=(b,))
        rng = np.random.Generator(np.random.PCG64(ss))
        k = rng.integers(0, 2**53, size=(self.BLOCK, self.dim), dtype=np.int64)
        return (k + 0.5) * 2.0**-53

    def uniforms(self, start: int, count: int, cols=None) -> np.ndarray:
        if start < 0 or count < 1:
            raise ValueError("need start >= 0 and count >= 1")
        first, last = start // self.BLOCK, (start + count - 1) // self.BLOCK
        rows = np.concatenate([self._block(b) for b in range(first, last + 1)])
        off = start - first * self.BLOCK
        out = rows[off:off + count]
        return out if cols is None else out[:, cols]

    def describe(self) -> str:
        return f"mc/pcg64/seed={self.seed}"


def make_source(kind: str, dim: int, seed: int = 0):
    if kind == "sobol":
        return SobolSequence(dim)
    if kind == "mc":
        return PseudoRandomSource(dim, seed)
    raise ValueError(f"unknown sequence kind {kind!r}")


def sobol_points(dim: int, start: int, count: int) -> np.ndarray:
    """Sobol points with absolute indices ``start .. start+count-1``; index 0 is skipped."""
    if start < 1:
        raise ValueError("index 0 (the origin) is not used; start at 1")
    return SobolSequence(dim).uniforms(start, count)


def inverse_normal_cdf(u):
    """Standard normal quantile for ``0 < u < 1``."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0.0) & (u < 1.0))):
        raise ValueError("inverse normal CDF needs 0 < u < 1")
    out = ndtri(u)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DimensionLayout:
    """How a point of the unit cube is split into per-step scheme inputs.

    Step ``k`` owns a contiguous slice; for the NV family the slice has
    ``d + 1`` coordinates, the first ``d`` feeding the Gaussian increments and
    the last one the order coin.
    """

    K: int
    d: int
    scheme: str

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.K < 1 or self.d < 1:
            raise ValueError("K and d must be >= 1")

    @property
    def per_step(self) -> int:
        return self.d if self.scheme == "euler" else self.d + 1

    @property
    def D(self) -> int:
        return self.K * self.per_step

    @property
    def has_coin(self) -> bool:
        return self.scheme != "euler"


@dataclass
class TrajectoryDraw:
    """Standard-normal increments ``Z`` of shape ``(K, d, M)`` and coins ``Lambda`` of shape ``(K, M)``."""

    Z: np.ndarray
    Lambda: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.Z.shape[0]


def draw_trajectory(layout: DimensionLayout, points) -> TrajectoryDraw:
    """Map uniform points of shape ``(D,)`` or ``(M, D)`` to a trajectory draw."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != layout.D:
        raise ValueError(f"point dimension {pts.shape[1]} does not match layout dimension {layout.D}")
    m = pts.shape[0]
    blocks = pts.T.reshape(layout.K, layout.per_step, m)
    Z = ndtri(blocks[:, : layout.d])
    lam = None
    if layout.has_coin:
        lam = np.where(blocks[:, layout.d] < 0.5, -1, 1).astype(np.int8)
    if single:
        Z = Z[..., 0]
        lam = None if lam is None else lam[:, 0]
    return TrajectoryDraw(Z, lam)
