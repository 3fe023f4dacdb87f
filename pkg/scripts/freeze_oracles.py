"""Compute independent oracle values and freeze them into tests/oracles.json.

The Lyapunov oracle is a single-trajectory ergodic average of 10^7 steps,
which shares no code path with the many-trajectory estimator under test
beyond the atom sampler.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from sl2lab.measures import reference_measure
from sl2lab.walk import run_ergodic

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=10_000_000)
    ap.add_argument("--seed", type=int, default=20260101)
    ap.add_argument("--out", default=str(ROOT / "tests" / "oracles.json"))
    args = ap.parse_args()

    mu = reference_measure()
    gamma, se = run_ergodic(mu, args.steps, seed=args.seed)
    # 2x2 symmetric eigenvalue oracle for the shear [[1, 1], [0, 1]]
    shear = np.array([[1.0, 1.0], [0.0, 1.0]])
    top = float(np.sqrt(np.linalg.eigvalsh(shear.T @ shear)[-1]))
    out = {
        "reference_gamma_ergodic": {"value": gamma, "se": se, "steps": args.steps, "seed": args.seed},
        "shear_opnorm": top,
    }
    Path(args.out).write_text(json.dumps(out, indent=2) + "\n")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
