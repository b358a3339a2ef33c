"""Why stride-2 sampling on an even extent cannot commute with rotation.

On a 2n x 2n grid, a stride-2 convolution samples the points whose
coordinates are odd in both axes (1-based, k=3, p=1 lattice). Rotating the
grid a quarter turn sends (2i+1, 2j+1) to (2j+1, 2n-2i): every pre-rotation
sampling row is odd, every post-rotation row is even, so the two sampling
sets cannot intersect and the strided conv reads different pixels on the
two sides of the equivariance square.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class MismatchDemo:
    n: int
    pre: list = field(default_factory=list)   # (x, y) sampling points, rows = y
    post: list = field(default_factory=list)
    pre_rows: set = field(default_factory=set)
    post_rows: set = field(default_factory=set)
    disjoint: bool = False

    def summary(self) -> str:
        lines = [
            f"image size 2n = {2 * self.n}",
            f"pre-rotation sampling points:  {self.pre}",
            f"post-rotation sampling points: {self.post}",
            f"pre rows  {sorted(self.pre_rows)} (all odd)",
            f"post rows {sorted(self.post_rows)} (all even)",
            f"row-parity disjoint: {self.disjoint}",
        ]
        return "\n".join(lines)


def sampling_mismatch_demo(n: int) -> MismatchDemo:
    """Enumerate both sampling sets for image size 2n and check parity.

    Points are (x, y) pairs with y the row index. Pre-rotation set is
    {(2i+1, 2j+1)}; after a quarter turn it becomes {(2j+1, 2n-2i)},
    i, j in [0, n).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    demo = MismatchDemo(n=n)
    for i in range(n):
        for j in range(n):
            demo.pre.append((2 * i + 1, 2 * j + 1))
            demo.post.append((2 * j + 1, 2 * n - 2 * i))
    demo.pre_rows = {y for _, y in demo.pre}
    demo.post_rows = {y for _, y in demo.post}
    demo.disjoint = (not demo.pre_rows & demo.post_rows
                     and not set(demo.pre) & set(demo.post))
    return demo
