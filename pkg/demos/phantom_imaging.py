"""Reconstruct the four-quadrant elasticity phantom with the LSM baseline.

Each pixel of a 16x16 phantom holds one simulated indentation curve; fitting
every pixel yields three parameter images (E0, alpha, tau).  Outputs land in
demos/_out/phantom as CSV matrices plus 16-bit PGM previews.

    python3 demos/phantom_imaging.py [--small]
"""

import argparse
import sys
from pathlib import Path

from dqmp import baselines, imaging


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--small", action="store_true",
                    help="30-point curves instead of 250 (quick look)")
    args = ap.parse_args(argv)

    spec = imaging.default_phantom(m=30 if args.small else 250)
    fitters = {"lsm": lambda curve, proto, truth: baselines.lm_fit(curve, proto)}
    images, reports = imaging.run_phantom(spec, fitters, master_seed=0)

    out = Path(__file__).parent / "_out" / "phantom"
    out.mkdir(parents=True, exist_ok=True)
    for name, img in images.items():
        for path in imaging.export_image(img, out / name):
            print("wrote", path)
    imaging.write_report_table(reports, out / "report.txt")
    for rep in reports.values():
        print(rep.row())
    return 0


if __name__ == "__main__":
    sys.exit(main())
