"""Rate-distortion frontiers of none, row-KLT and row-ELT on the AR(1) toy net.

Each transform is bisected to the same target rates, so points are compared
at matched realized rate. Writes a CSV and an SVG chart.
"""

import argparse
import csv
import time
from pathlib import Path

from tquant import svg
from tquant.rdopt import CompressionProblem, RDConfig
from tquant.toy import calibration_batch, toy_network

TRANSFORMS = ("none", "row-klt", "row-elt")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--targets", default="1.5,2,2.5,3,4", help="comma-separated target rates (bits/weight)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--calib", type=int, default=64, help="calibration batch size")
    p.add_argument("--max-bits", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results", help="output directory")
    args = p.parse_args()

    targets = [float(t) for t in args.targets.split(",")]
    net = toy_network("ar1", seed=args.seed)
    calib = calibration_batch(net, args.calib, seed=args.seed + 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows, series = [], {}
    for transform in TRANSFORMS:
        start = time.perf_counter()
        prob = CompressionProblem.prepare(net, calib, RDConfig(transform, max_bits=args.max_bits,
                                                               workers=args.workers, seed=args.seed))
        points = [prob.compress_to_rate(t)[0] for t in targets]
        print(f"{transform:>8}: {time.perf_counter() - start:.1f} s")
        for t, pt in zip(targets, points):
            rows.append([transform, t, pt.lam, pt.rate, pt.budget.basis_bits, pt.distortion, pt.accuracy,
                         pt.flop_ratio])
        series[transform] = ([pt.rate for pt in points], [pt.distortion for pt in points])

    header = ["transform", "target_rate", "lambda", "rate_bits_per_weight", "basis_bits", "distortion",
              "accuracy_proxy", "flop_ratio"]
    with open(out / "frontier_analog.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    svg.write_svg(str(out / "frontier_analog.svg"),
                  svg.line_chart(series, "AR(1) toy net", "rate (bits/weight)", "output distortion", logy=True))

    print(f"{'target':>8} " + " ".join(f"{t:>20}" for t in TRANSFORMS))
    for i, t in enumerate(targets):
        cells = [f"{rows[j * len(targets) + i][3]:.3f}/{rows[j * len(targets) + i][5]:.4g}"
                 for j in range(len(TRANSFORMS))]
        print(f"{t:>8} " + " ".join(f"{c:>20}" for c in cells))


if __name__ == "__main__":
    main()
