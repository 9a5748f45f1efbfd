"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 file/format error, 3 validation
failure (unmet target rate, failed theory check).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import svg
from .codec.nwt import FormatError, NwtRecord, load_model, load_tensor, network_to_records, tensor_record, write_nwt
from .codec.tqz import read_tqz, write_tqz
from .covariance import covariance_pair
from .model import Network, ShapeError, network_forward, squared_error, top1_agreement
from .rdopt import CompressionProblem, RDConfig, TRANSFORM_CHOICES, frontier, quantized_network
from .rdopt.inference import acceleration, layer_k, network_acceleration, overhead_elements
from .transforms import elt, gain_decomposition, klt, to_db
from .theory import (fit_epsilon, monte_carlo_distortion, per_bit_ratios, predict_d_tc, random_source,
                     white_source)
from .transforms import coding_gain, identity_plan

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_VALIDATION = 0, 1, 2, 3
SWEEP_COLUMNS = ("lambda", "rate_bits_per_weight", "distortion", "accuracy_proxy", "flop_ratio")
STATS_COLUMNS = ("layer", "n", "m", "a", "b", "axis", "klt_gain_db", "klt_weight_db", "klt_gradient_db",
                 "elt_gain_db", "elt_weight_db", "elt_gradient_db", "overhead_pct")
THEORY_COLUMNS = ("case", "R", "predicted", "measured", "ratio")
VISIBLE_COMMANDS = ("stats", "compress", "eval", "sweep", "validate-theory")


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("TQ_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"TQ_SEED must be an integer, got {raw!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _bits(text: str) -> int:
    value = int(text)
    if not 1 <= value <= 16:
        raise argparse.ArgumentTypeError("must be in [1, 16]")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("expected a non-empty list of non-negative numbers")
    return values


def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $TQ_SEED or 0)")
    if data:
        p.add_argument("--model", required=True, help="NWT model file")
        p.add_argument("--calib", required=True, help="NWT file holding a calibration tensor (count, C, H, W)")
        p.add_argument("--ridge", type=_nonneg_float, default=1e-8, help="relative covariance ridge")
        p.add_argument("--probes", type=_positive_int, default=None,
                       help="random gradient probes (default: exact when the output is small)")


def _add_rd(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transform", choices=TRANSFORM_CHOICES, default="row-elt")
    p.add_argument("--blocks", type=_positive_int, default=8, help="blocks per section (B)")
    p.add_argument("--max-bits", type=_bits, default=16, help="largest bit-depth (M)")
    p.add_argument("--steps", type=_positive_int, default=2, help="step-size candidates per octave")
    p.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1,
                   help="curve-construction threads (default: logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tquant", description="Transform quantization of network weights.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser,
                                metavar="{" + ",".join(VISIBLE_COMMANDS) + "}")

    p = sub.add_parser("stats", help="per-layer KLT/ELT coding gains and basis overhead")
    _add_common(p)
    p.add_argument("--axis", choices=("row", "column"), default="row")
    p.add_argument("--csv", help="write the table as CSV")
    p.add_argument("--svg", help="write a bar chart of the gains")

    p = sub.add_parser("compress", help="compress a model to a TQZ file")
    _add_common(p)
    _add_rd(p)
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--lambda", dest="lam", type=_nonneg_float, help="Lagrange multiplier")
    target.add_argument("--target-rate", type=float, help="bits per weight to reach within 2%%")
    p.add_argument("--out", required=True, help="output TQZ file")

    p = sub.add_parser("eval", help="decode a TQZ file and measure it against the reference model")
    _add_common(p)
    p.add_argument("--tqz", required=True)
    p.add_argument("--csv", help="write per-layer k and acceleration as CSV")

    p = sub.add_parser("sweep", help="rate-distortion frontier over a lambda list")
    _add_common(p)
    _add_rd(p)
    p.add_argument("--lambdas", type=_float_list, help="comma-separated lambdas (default: log-spaced)")
    p.add_argument("--points", type=_positive_int, default=5, help="number of default lambdas")
    p.add_argument("--baseline", action="store_true", help="also sweep transform=none")
    p.add_argument("--csv", required=True, help="frontier CSV")
    p.add_argument("--baseline-csv", help="baseline frontier CSV (default: <csv>_none.csv)")
    p.add_argument("--svg", help="frontier plot")

    p = sub.add_parser("validate-theory", help="Monte Carlo check of the high-rate distortion laws")
    _add_common(p, data=False)
    p.add_argument("--trials", type=_positive_int, default=100_000)
    p.add_argument("--dim", type=_positive_int, default=4)
    p.add_argument("--rates", default="6,7,8,9,10", help="comma-separated bit-depths")
    p.add_argument("--csv", help="report CSV")

    p = sub.add_parser("gen-toy")
    _add_common(p, data=False)
    p.add_argument("--kind", choices=("ar1", "white"), default="ar1")
    p.add_argument("--rho", type=float, default=0.9)
    p.add_argument("--count", type=_positive_int, default=64, help="calibration samples")
    p.add_argument("--out", required=True, help="model NWT file")
    p.add_argument("--calib-out", required=True, help="calibration NWT file")
    return parser


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def _load(args) -> tuple[Network, np.ndarray]:
    calib = load_tensor(args.calib)
    net = load_model(args.model, calib.shape[1:])
    if calib.shape[0] == 0:
        raise FormatError("calibration tensor is empty")
    return net, calib


def _config(args) -> RDConfig:
    return RDConfig(args.transform, args.blocks, args.max_bits, args.steps, args.ridge, args.probes,
                    args.workers, _seed(args))


def _write_csv(path: str, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def cmd_stats(args) -> int:
    net, calib = _load(args)
    rows = []
    for idx, layer in enumerate(net.layers):
        pair = covariance_pair(net, idx, calib, args.axis, args.ridge, args.probes, _seed(args) + idx)
        ct, cg = pair.theta_reg, pair.gamma_reg
        row = [layer.name or f"layer{idx}", *layer.shape, args.axis]
        for plan in (klt(ct, args.axis), elt(ct, cg, args.axis)):
            gw, gg = gain_decomposition(ct, cg, plan)
            row += [_fmt(to_db(gw * gg)), _fmt(to_db(gw)), _fmt(to_db(gg))]
        row.append(_fmt(100.0 * overhead_elements(layer.shape, args.axis) / layer.size))
        rows.append(row)
    print(" ".join(f"{c:>14}" for c in ("layer", "klt_dB", "elt_dB", "overhead_%")))
    for r in rows:
        print(f"{r[0]:>14} {float(r[6]):>14.3f} {float(r[9]):>14.3f} {float(r[12]):>14.2f}")
    if args.csv:
        _write_csv(args.csv, STATS_COLUMNS, rows)
    if args.svg:
        svg.write_svg(args.svg, svg.bar_chart([r[0] for r in rows],
                                              {"KLT": [float(r[6]) for r in rows],
                                               "ELT": [float(r[9]) for r in rows]},
                                              f"{args.axis} coding gains", "gain (dB)"))
    return EXIT_OK


def cmd_compress(args) -> int:
    net, calib = _load(args)
    problem = CompressionProblem.prepare(net, calib, _config(args))
    ok = True
    if args.target_rate is not None:
        if not args.target_rate > 0:
            raise UsageError("--target-rate must be positive")
        point, ok = problem.compress_to_rate(args.target_rate, 0.02)
    else:
        point = problem.evaluate(args.lam)
    write_tqz(args.out, point.model)
    signal = float(np.mean(np.sum(problem.y_ref.reshape(len(calib), -1) ** 2, axis=1)))
    print(f"transform          {args.transform}")
    print(f"lambda             {point.lam:.6g}")
    print(f"rate               {point.rate:.6f} bits/weight (basis {point.budget.basis_bits} bits)")
    print(f"compression ratio  {point.budget.compression_ratio:.3f}x")
    print(f"distortion         {point.distortion:.6g} (relative {point.distortion / signal:.3g})")
    print(f"accuracy proxy     {point.accuracy:.4f}")
    print(f"flop ratio         {point.flop_ratio:.4f}")
    print(f"k per layer        {','.join(str(k) for k in point.plan.ks)}")
    if not ok:
        print(f"error: target rate {args.target_rate} not reached within 2% "
              f"(closest {point.rate:.4f})", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_eval(args) -> int:
    net, calib = _load(args)
    model = read_tqz(args.tqz)
    if len(model.layers) != len(net.layers) or any(
            tuple(lc.shape) != layer.shape for lc, layer in zip(model.layers, net.layers)):
        raise FormatError("TQZ layer shapes do not match the model")
    qnet = quantized_network(net, model)
    y_ref, y = network_forward(net, calib), network_forward(qnet, calib)
    accel = network_acceleration(net, model.layers, model.axis)
    rows = []
    for idx, (lc, ratio) in enumerate(zip(model.layers, accel.per_layer)):
        k = layer_k(lc)
        analytic = acceleration(lc.shape, k, model.axis) if model.transform in ("klt", "elt") else ratio
        rows.append([idx, *lc.shape, k, _fmt(analytic), _fmt(ratio)])
    print(f"rate               {model.rate:.6f} bits/weight")
    print(f"distortion         {squared_error(y_ref, y):.6g}")
    print(f"accuracy proxy     {top1_agreement(y_ref, y):.4f}")
    print(f"acceleration       {accel.overall:.4f} (activation-weighted), {accel.exact_ratio:.4f} (total)")
    for r in rows:
        print(f"layer {r[0]}: k={r[5]} analytic={float(r[6]):.4f} measured={float(r[7]):.4f}")
    if args.csv:
        _write_csv(args.csv, ("layer", "n", "m", "a", "b", "k", "acceleration_analytic", "flop_ratio"), rows)
    return EXIT_OK


def _sweep_rows(points):
    return [[_fmt(p.lam), _fmt(p.rate), _fmt(p.distortion), _fmt(p.accuracy), _fmt(p.flop_ratio)]
            for p in frontier(points)]


def cmd_sweep(args) -> int:
    net, calib = _load(args)
    results = {}
    names = [args.transform] + (["none"] if args.baseline and args.transform != "none" else [])
    for name in names:
        cfg = RDConfig(name, args.blocks, args.max_bits, args.steps, args.ridge, args.probes,
                       args.workers, _seed(args))
        problem = CompressionProblem.prepare(net, calib, cfg)
        lams = args.lambdas if args.lambdas else problem.default_lambdas(args.points)
        results[name] = problem.sweep(lams)
    _write_csv(args.csv, SWEEP_COLUMNS, _sweep_rows(results[args.transform]))
    if "none" in results and args.transform != "none":
        target = args.baseline_csv or str(Path(args.csv).with_name(Path(args.csv).stem + "_none.csv"))
        _write_csv(target, SWEEP_COLUMNS, _sweep_rows(results["none"]))
    for name, pts in results.items():
        for p in frontier(pts):
            print(f"{name:>8} lambda={p.lam:.4g} rate={p.rate:.4f} D={p.distortion:.6g} acc={p.accuracy:.3f}")
    if args.svg:
        series = {name: ([p.rate for p in pts], [p.distortion for p in pts]) for name, pts in results.items()}
        svg.write_svg(args.svg, svg.line_chart(series, "rate-distortion frontier", "bits per weight",
                                               "output distortion", logy=True))
    return EXIT_OK


def validate_theory(dim: int, rates, trials: int, seed: int):
    """Report rows and failed checks of the Monte Carlo validation."""
    rows, failures = [], []
    white = white_source(dim, seed)
    fit = fit_epsilon(white, rates, trials)
    for r, d in zip(rates, fit.distortions):
        pred = predict_d_tc(white.with_eps2(fit.eps2), identity_plan(dim), r)
        rows.append(["white", r, pred, d, d / pred])
    corr = random_source(dim, seed + 1).with_eps2(fit.eps2)
    plan = elt(corr.c_theta, corr.c_gamma)
    for case, p in (("correlated-none", identity_plan(dim)), ("correlated-elt", plan)):
        meas = [monte_carlo_distortion(corr, p, r, trials) for r in rates]
        for r, d in zip(rates, meas):
            pred = predict_d_tc(corr, p, r)
            rows.append([case, r, pred, d, d / pred])
        ratios = per_bit_ratios(meas)
        if np.any(ratios < 3.2) or np.any(ratios > 4.8):
            failures.append(f"{case}: per-bit distortion ratios {np.round(ratios, 3).tolist()} outside [3.2, 4.8]")
    gain = coding_gain(corr.c_theta, corr.c_gamma, plan)
    none_d = [row[3] for row in rows if row[0] == "correlated-none"]
    elt_d = [row[3] for row in rows if row[0] == "correlated-elt"]
    for r, dn, de in zip(rates, none_d, elt_d):
        if abs(dn / de / gain - 1.0) > 0.25:
            failures.append(f"R={r}: measured gain {dn / de:.4f} vs predicted {gain:.4f}")
    return rows, failures, fit.eps2


def cmd_validate_theory(args) -> int:
    try:
        rates = [float(r) for r in args.rates.split(",") if r.strip()]
    except ValueError:
        raise UsageError("--rates must be comma-separated numbers") from None
    if len(rates) < 2 or min(rates) <= 0:
        raise UsageError("--rates needs at least two positive bit-depths")
    if args.trials < 1000:
        raise UsageError("--trials must be at least 1000")
    rows, failures, eps2 = validate_theory(args.dim, rates, args.trials, _seed(args))
    print(f"fitted eps^2 = {eps2:.5f}")
    for case, r, pred, meas, ratio in rows:
        print(f"{case:>16} R={r:<5g} predicted={pred:.6g} measured={meas:.6g} ratio={ratio:.4f}")
    if args.csv:
        _write_csv(args.csv, THEORY_COLUMNS, [[c, _fmt(r), _fmt(p), _fmt(m), _fmt(q)] for c, r, p, m, q in rows])
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_VALIDATION if failures else EXIT_OK


def cmd_gen_toy(args) -> int:
    from .toy import calibration_batch, toy_network

    seed = _seed(args)
    net = toy_network(args.kind, seed, rho=args.rho)
    write_nwt(args.out, network_to_records(net))
    write_nwt(args.calib_out, [tensor_record("calib", calibration_batch(net, args.count, seed + 1))])
    print(f"wrote {args.out} ({net.weight_count} weights) and {args.calib_out} ({args.count} samples)")
    return EXIT_OK


COMMANDS = {"stats": cmd_stats, "compress": cmd_compress, "eval": cmd_eval, "sweep": cmd_sweep,
            "validate-theory": cmd_validate_theory, "gen-toy": cmd_gen_toy}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tquant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, OSError) as exc:
        print(f"tquant: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
