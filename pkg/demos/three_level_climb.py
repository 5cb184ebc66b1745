"""Climb from level 0 to level 2 of the three_level model through two intersections."""

import numpy as np

from conic_climb import builtin
from conic_climb.conical import locate_intersection
from conic_climb.planner import SpreadTarget, plan
from conic_climb.propagate import propagate_full
from conic_climb.spectral import Disc


def main():
    model = builtin("three_level")
    xs = [locate_intersection(model, 0, (1.2, 0.2), Disc((4 / 3, 0.0), 0.5), ident="x0"),
          locate_intersection(model, 1, (0.1, 0.1), Disc((0.0, 0.0), 0.5), ident="x1")]
    for x in xs:
        print(f"{x.ident}: levels {x.band} at {np.round(x.point, 8).tolist()}, det M = {x.det:+.3f}")
    for p in [(0.0, 0.0, 1.0), tuple(np.full(3, 1 / np.sqrt(3)))]:
        target = SpreadTarget(p)
        path = plan(model, xs, (2.0, 0.5), (-0.6, 0.3), target)
        res = propagate_full(model, path, 3e-3, target=target)
        print(f"target {np.round(p, 4).tolist()}: moduli {np.round(res.overlaps, 4).tolist()}, "
              f"error {res.error:.2e}")


if __name__ == "__main__":
    main()
