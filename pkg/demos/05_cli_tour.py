"""Tour of the command-line interface, driven in-process.

Every subcommand is exercised against a scratch directory:

  gen-measure   write an atom measure (curve / flow / foliation input)
  check-hol     holonomy residual table, exit 0 iff within tolerance
  approximate   the full cycle-approximation pipeline, CSV + JSON reports
  frobenius     invariant-density feasibility for a plane field
  pseudoholo    almost complex structure on T^4

The same commands work from a shell via the `holocycle` entry point;
main() is called here so the demo needs no installed script.
"""

import json
import math
import tempfile
from pathlib import Path

from holocycle.cli import main, trig_to_dict
from holocycle.geometry import TrigPolynomial

GOLDEN = (1 + math.sqrt(5)) / 2

CONFIG = """
[torus]
d = 2
n = 1

[density]
type = bump
centers = 1.0 {phi}
eps = 0.125

[pipeline]
k_max = 2
k_min = 1
leaves = 2
leaf_length = 2.0
seed = 5
nodes_per_unit = 32

[lagrangian]
energy = 1 + vnorm2
""".format(phi=GOLDEN)


def write_fields(path, dim, vecs):
    fields = [[trig_to_dict(TrigPolynomial.constant(dim, float(c))) for c in v]
              for v in vecs]
    Path(path).write_text(json.dumps({"dim": dim, "fields": fields}))
    return str(path)


def run(args):
    print(f"$ holocycle {' '.join(args)}")
    rc = main(args)
    print(f"  -> exit {rc}\n")
    return rc


def main_demo():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)

        # a closed curve is holonomic; a short open segment is not
        run(["--out", str(tmp), "gen-measure", "--kind", "curve",
             "--expr", "t, 2*t", "--atoms", "256"])
        run(["--out", str(tmp), "check-hol", str(tmp / "measure.txt"),
             "--tol", "1e-3"])
        run(["--out", str(tmp), "gen-measure", "--kind", "curve",
             "--expr", "0.25*t, 0", "--atoms", "128"])
        run(["--out", str(tmp), "check-hol", str(tmp / "measure.txt")])

        # the pipeline, from a config file
        cfg = tmp / "run.ini"
        cfg.write_text(CONFIG)
        run(["--config", str(cfg), "--out", str(tmp / "run"), "approximate"])
        print((tmp / "run" / "report.csv").read_text())

        # plane-field feasibility
        pair = write_fields(tmp / "pair.json", 3, [[1, 0, 0], [0, 1, 0]])
        run(["--out", str(tmp), "frobenius", pair, "--cutoff", "1"])
        print(" ", json.dumps(json.loads((tmp / "frobenius.json").read_text())))

        # almost complex structure on T^4
        xp = write_fields(tmp / "x.json", 4, [[1, 0, 0, 0]])
        yp = write_fields(tmp / "y.json", 4, [[0, 1, 0, 0]])
        run(["--out", str(tmp), "pseudoholo", xp, yp, "--grid", "2"])
        rep = json.loads((tmp / "pseudoholo.json").read_text())
        print(f"  feasible={rep['feasible']}")


if __name__ == "__main__":
    main_demo()
