"""Score the fixed 24-pair held-out set and print one row per pair with its expected band.

    python3 scripts/table_analog.py runs/default/weights.json
"""

import argparse

import numpy as np

from contact_quality.features import compute_features
from contact_quality.model import load_weights, prepare_input, quality_score, score_inputs
from contact_quality.synthgen import table_analog_set


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("weights")
    ap.add_argument("--features", action="store_true", help="also print oracle features")
    args = ap.parse_args()
    model = load_weights(args.weights)
    cases = table_analog_set()
    scores = np.atleast_1d(quality_score(score_inputs(model, [prepare_input(model, c.pair) for c in cases])))

    hits = 0
    print(f"{'pair':<20} {'category':<22} {'band':>9} {'score':>7}")
    for c, s in zip(cases, scores):
        lo, hi = c.label.band
        ok = lo <= s <= hi
        hits += ok
        line = f"{c.name:<20} {c.category:<22} {lo:3.0f}-{hi:<3.0f}  {s:7.2f} {'' if ok else '  <- outside'}"
        if args.features:
            f = compute_features(c.pair)
            line += f"  g/L {f.gap_rel:.3f} angle {f.angle_deg:.1f} overlap {f.overlap_ab:.2f}"
        print(line)
    print(f"\n{hits}/{len(cases)} inside the expected band")


if __name__ == "__main__":
    main()
