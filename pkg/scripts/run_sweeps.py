"""Score the translate, rotate and scale sweeps with trained weights and summarise each.

    python3 scripts/run_sweeps.py runs/default/weights.json
"""

import argparse

import numpy as np
from scipy.stats import spearmanr

from contact_quality.model import load_weights, prepare_input, quality_score, score_inputs
from contact_quality.synthgen import sweep_pairs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("weights")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    model = load_weights(args.weights)

    for kind in ("translate", "rotate", "scale"):
        steps = sweep_pairs(kind, seed=args.seed)
        probs = score_inputs(model, [prepare_input(model, p) for _, p in steps])
        c = np.atleast_1d(quality_score(probs))
        params = np.array([v for v, _ in steps])
        print(f"\n{kind}")
        print("  parameter      P1      P2      P3       C")
        for v, p, s in zip(params, probs, c):
            print(f"  {v:9.3f}  {p[0]:6.3f}  {p[1]:6.3f}  {p[2]:6.3f}  {s:6.2f}")
        if kind == "translate":
            print(f"  spearman rho {spearmanr(params, c).statistic:.3f}; final C {c[-1]:.2f}")
        elif kind == "rotate":
            print(f"  C(0) {c[0]:.2f}; minimum at {params[np.argmin(c)]:.0f} deg")
        else:
            dev = np.abs(c - params * c[0])
            print(f"  non-increasing {bool(np.all(np.diff(c) <= 0))}; "
                  f"max |C(s) - s*C(1)| {dev.max():.2f}")


if __name__ == "__main__":
    main()
