"""Average eMBB SE and URLLC availability under SPC with FPA over a (nu, omega) grid.

    python3 scripts/fpa_grid.py --snapshots 5 --realizations 100 -o results/fpa_grid.csv
"""

import argparse
import itertools
import logging
from pathlib import Path

import numpy as np

from coexsim.config import validate_config
from coexsim.harness import Table, run_campaign


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nu", type=float, nargs="+", default=[-1.0, -0.5, 0.0, 0.5, 1.0])
    ap.add_argument("--omega", type=float, nargs="+", default=[0.1, 0.2, 0.4, 0.6, 0.8])
    ap.add_argument("--precoder", nargs="+", default=["mr", "rzf", "mmmse"])
    ap.add_argument("--snapshots", type=int, default=5)
    ap.add_argument("--realizations", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-o", "--output", default="results/fpa_grid.csv")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Table(["nu", "omega", "precoder", "mean_user_se", "availability", "n_urllc"])
    for nu, omega in itertools.product(args.nu, args.omega):
        camp = validate_config(
            "",
            [
                'campaign.modes=["spc"]',
                'campaign.powers=["fpa"]',
                f"campaign.precoders={list(args.precoder)!r}".replace("'", '"'),
                f"campaign.fpa_nu={nu}",
                f"campaign.fpa_omega={omega}",
                f"campaign.n_snapshots={args.snapshots}",
                f"campaign.n_realizations={args.realizations}",
                f"campaign.seed={args.seed}",
            ],
        )
        p = run_campaign(camp).points[0]
        if p.error:
            logging.warning("nu=%g omega=%g failed: %s", nu, omega, p.error)
            continue
        for pc in args.precoder:
            se = p.se.select(precoder=pc).column("se")
            av = p.availability("spc", pc, "fpa", camp.eps_target)
            out.add(nu, omega, pc, float(np.mean(se)), av, len(p.eps.select(precoder=pc)))
            logging.info("nu=%+.2f omega=%.2f %-5s SE %.3f eta %.3f", nu, omega, pc, out.rows[-1][3], av)
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(args.output)


if __name__ == "__main__":
    main()
