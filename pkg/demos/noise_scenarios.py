"""Monte-Carlo accuracy under the three preset scenarios.

The ideal case recovers everything to rounding error. Additive noise
mostly hurts resistance, whose share of the series impedance is small,
and the CT ratios, which come from a total-least-squares fit of bus
currents that vary along nearly one direction.

    python3 demos/noise_scenarios.py [trials]
"""
import sys

from netslic.evaluation import preset, run_monte_carlo
from netslic.networks import desk_network


def main(trials=20):
    network = desk_network()
    print(f"{'scenario':<18} {'r %':>7} {'x %':>7} {'b %':>7} "
          f"{'|VT| %':>8} {'|CT| %':>8} {'VT deg':>8} {'CT deg':>8}")
    for name in ("ideal", "noisy-perfect-rqm", "realistic"):
        rep = run_monte_carlo(network, preset(name), trials)
        print(f"{name:<18} {rep.line_mare('r'):>7.3f} "
              f"{rep.line_mare('x'):>7.3f} {rep.line_mare('b'):>7.3f} "
              f"{rep.cf_magnitude_mare('vt'):>8.4f} "
              f"{rep.cf_magnitude_mare('ct'):>8.4f} "
              f"{rep.cf_angle_mae('vt'):>8.4f} {rep.cf_angle_mae('ct'):>8.4f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
