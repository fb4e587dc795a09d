"""Effect of calibration on a downstream linear state estimator.

The base case builds the observation model from database line parameters
and uses raw measurements. The calibrated case swaps in the estimated
parameters and multiplies every tree channel by its correction factor.

    python3 demos/state_estimation.py [trials]
"""
import sys

from netslic.evaluation import preset
from netslic.lse import lse_comparison
from netslic.networks import desk_network


def main(trials=10):
    out = lse_comparison(desk_network(), preset("realistic"), trials)
    for case in ("base", "post_slic"):
        print(f"{case:<10} net ARE {out[case]['are']:.5f}%  "
              f"net AE {out[case]['ae']:.5f} deg")
    imp = out["improvement_pct"]
    print(f"improvement: magnitude {imp['are']:.1f}%, angle {imp['ae']:.1f}%")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10)
