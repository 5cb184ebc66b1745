"""Split the ground state of pauli2 into equal moduli through one vertex.

Plans a path, then compares the full, adiabatic and effective propagators
for a few epsilons.
"""

import math

from conic_climb import builtin, is_conical
from conic_climb.experiment import two_level_vertex_path
from conic_climb.propagate import propagate_adiabatic, propagate_effective, propagate_full


def main():
    model = builtin("pauli2")
    x = is_conical(model, (0.0, 0.0), 0, ident="x0")
    print(f"det M = {x.det:+.3f}, cone constant = {x.cone_constant:.3f}")
    path = two_level_vertex_path(model, x, math.pi / 4)
    v = path.vertices[0]
    print(f"vertex: alpha- = {v['alpha_minus']:.4f}, alpha+ = {v['alpha_plus']:.4f}")
    target = (math.sqrt(0.5), math.sqrt(0.5))
    print(f"{'eps':>8} {'full':>10} {'adiabatic':>10} {'effective':>10}")
    for eps in (1e-1, 3e-2, 1e-2, 3e-3):
        errs = [f(model, path, eps, target=target).error
                for f in (propagate_full, propagate_adiabatic, propagate_effective)]
        print(f"{eps:8.0e} " + " ".join(f"{e:10.2e}" for e in errs))


if __name__ == "__main__":
    main()
