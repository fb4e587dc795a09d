"""Simulate one realistic dataset on the built-in network, calibrate it and
compare every estimate with the planted truth.

    python3 demos/calibrate_one_dataset.py [seed]
"""
import sys

from netslic.evaluation import preset, score_branch
from netslic.networks import desk_network
from netslic.pipeline import calibrate_dataset


def main(seed=0):
    network = desk_network()
    dataset = preset("realistic").dataset(network, seed)
    print(f"{dataset.n_samples} samples, {len(dataset.measurements)} "
          f"monitored branches, RQM at bus {network.rqm_end} of "
          f"{network.rqm_branch}")
    estimates = calibrate_dataset(dataset)
    print(f"{'branch':>7} {'r err %':>8} {'x err %':>8} {'b err %':>8} "
          f"{'|VT| err %':>11} {'|CT| err %':>11} {'CT ang deg':>11}")
    for br, est in estimates.items():
        err = score_branch(est, dataset)
        vt = max(err["|alpha_from|"], err["|alpha_to|"])
        ct = max(err["|beta_from|"], err["|beta_to|"])
        ang = max(err["arg beta_from"], err["arg beta_to"])
        print(f"{br[0]:>3}-{br[1]:<3} {err['r']:>8.3f} {err['x']:>8.3f} "
              f"{err['b']:>8.3f} {vt:>11.4f} {ct:>11.4f} {ang:>11.4f}")
    legacy = dataset.legacy[network.rqm_branch]
    truth = network.branch_spec(network.rqm_branch).params
    est = estimates[network.rqm_branch].line
    print(f"\nRQM branch x: database {legacy.x:.5f}, estimate {est.x:.5f}, "
          f"truth {truth.x:.5f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
