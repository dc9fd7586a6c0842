"""Pseudoholomorphic 2-tori inside T^4 from a pair of vector fields.

Given commuting directions X and Y on T^4, project Y off X and test the
two linear conditions (flow invariance and divergence-freeness of the
projection).  When they hold, the pair integrates to a foliation by flat
2-tori and we can assemble an almost complex structure J on a grid that
makes every leaf J-holomorphic: J X = Y / rho, J^2 = -I.
"""

import numpy as np

from holocycle import TrigPolynomial, pseudoholomorphic_construct


def const_field(vec):
    return tuple(TrigPolynomial.constant(4, float(c)) for c in vec)


def main():
    print("== standard pair (e1, e2) ==")
    X = const_field([1, 0, 0, 0])
    Y = const_field([0, 1, 0, 0])
    rep = pseudoholomorphic_construct(X, Y, grid=4)
    print(f"  feasible          {rep.feasible}")
    print(f"  flow residual     {rep.flow_residual:.2e}")
    print(f"  div residual      {rep.divergence_residual:.2e}")
    J = np.asarray(rep.structure.J)
    err = np.abs(np.einsum("kij,kjl->kil", J, J) + np.eye(4)).max()
    print(f"  max |J^2 + I|     {err:.2e}  over {len(J)} grid points")

    print("== sheared pair: still feasible, non-constant J ==")
    Y2 = (TrigPolynomial.constant(4, 0.0),
          TrigPolynomial.constant(4, 1.0),
          TrigPolynomial.constant(4, 0.0),
          TrigPolynomial.mode(4, (0, 1, 0, 0), "sin") * 0.25)
    rep = pseudoholomorphic_construct(X, Y2, grid=4)
    print(f"  feasible          {rep.feasible}")
    if rep.feasible:
        J = np.asarray(rep.structure.J)
        err = np.abs(np.einsum("kij,kjl->kil", J, J) + np.eye(4)).max()
        spread = float(J.std(axis=0).max())
        print(f"  max |J^2 + I|     {err:.2e}")
        print(f"  J varies over the grid (max entrywise std {spread:.3f})")

    print("== obstructed pair: Y depends on the X-flow direction ==")
    Y3 = (TrigPolynomial.constant(4, 0.0),
          TrigPolynomial.constant(4, 1.0),
          TrigPolynomial.mode(4, (1, 0, 0, 0), "sin"),
          TrigPolynomial.constant(4, 0.0))
    rep = pseudoholomorphic_construct(X, Y3, grid=4)
    print(f"  feasible          {rep.feasible}   (flow residual {rep.flow_residual:.3f})")


if __name__ == "__main__":
    main()
