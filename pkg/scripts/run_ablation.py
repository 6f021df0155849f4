"""Loss-term ablation: zero one weight at a time and compare flow and intensity
metrics against the full objective."""
import argparse

from evjoint.experiments import run_pair, two_window_scene
from evjoint.losses import DEFAULT_WEIGHTS, TERMS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--patterns", nargs="+", default=["checker:8", "noise:2"])
    ap.add_argument("--terms", nargs="+", default=["tv_flow", "tc"], choices=TERMS)
    ap.add_argument("--contrast", type=float, default=0.2)
    args = ap.parse_args()

    print(f"{'pattern':<12}{'ablated':<14}{'EPE':>10}{'AE':>10}{'corr':>8}")
    for pattern in args.patterns:
        pair = two_window_scene(pattern, args.contrast)
        for term in ["none", *args.terms]:
            weights = list(DEFAULT_WEIGHTS)
            if term != "none":
                weights[TERMS.index(term)] = 0.0
            _, m = run_pair(pair, weights=tuple(weights))
            print(f"{pattern:<12}{term:<14}{m['epe']:>10.4f}{m['ae']:>10.3f}{m['corr']:>8.3f}")


if __name__ == "__main__":
    main()
