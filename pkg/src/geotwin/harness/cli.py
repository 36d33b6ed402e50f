"""Command-line entry point.

Exit status: 0 on success, 1 on usage or configuration errors, 2 when a run
fails at runtime (unreadable scene file, GP failure, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
import scipy

import geotwin
from geotwin import chanstats, raytwin
from geotwin.gpredict import GpError
from geotwin.harness import experiment as ex
from geotwin.harness import validation
from geotwin.scene import SceneError, generate_twin_pair, save_scene, serialize_scene

log = logging.getLogger("geotwin")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scene", help="scene file; default is the builtin campus")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--max-order", type=int, default=2, help="maximum reflection order (0-3)")
    p.add_argument("--out-dir", help="directory for output files; stdout when omitted (where supported)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geotwin", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"geotwin {geotwin.__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("trace", help="paths CSV for one transmitter")
    _common(p)
    p.add_argument("--tx-id", type=int, default=0)

    p = sub.add_parser("stats", help="CDF and quantile CSVs per transmitter")
    _common(p)
    p.add_argument("--tx-id", type=int, help="only this transmitter")
    p.add_argument("--epsilon", type=float, default=0.01)

    p = sub.add_parser("experiment", help="full benchmark run")
    _common(p)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--delta", type=float, default=0.10)
    p.add_argument("--train-count", type=int, default=30)
    p.add_argument("--reps", type=int, default=1)

    p = sub.add_parser("validate-wssus", help="Monte-Carlo checks of the plane-wave model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--convention", choices=chanstats.CONVENTIONS, default="paper")
    p.add_argument("--n-waves", type=int, default=200)
    p.add_argument("--realizations", type=int, default=10_000)
    p.add_argument("--out-dir")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("validate-proxy", help="frequency vs location CDFs on the truth twin")
    _common(p)
    p.add_argument("--epsilon", type=float, default=0.01)

    p = sub.add_parser("gen-scene", help="write the builtin campus scene")
    p.add_argument("--seed", type=int, default=0, help="master seed the campus is derived from")
    p.add_argument("--truth", action="store_true", help="write the perturbed ground truth instead of the twin")
    p.add_argument("--out", help="output file; stdout when omitted")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args, **overrides) -> ex.ExperimentConfig:
    fields = dict(seed=args.seed, scene_path=args.scene, max_order=args.max_order)
    fields.update(overrides)
    return ex.ExperimentConfig(**fields)


def _out_dir(args) -> str | None:
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") if path else _Stdout() as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()


def _join(d, name):
    return os.path.join(d, name) if d else None


def _check_tx(scene, tx_id):
    if tx_id is not None and not 0 <= tx_id < scene.n_tx:
        raise UsageError(f"--tx-id {tx_id} out of range for {scene.n_tx} transmitters")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_trace(args) -> None:
    cfg = _config(args)
    cfg.validate_order()
    scene = cfg.base_scene()
    _check_tx(scene, args.tx_id)
    ps = raytwin.trace(scene, scene.tx_positions[args.tx_id], args.max_order)
    rows = [(args.tx_id, p.order, repr(p.delay), repr(p.amplitude.real), repr(p.amplitude.imag)) for p in ps.paths]
    _write_csv(_join(_out_dir(args), "paths.csv"), ("tx_id", "order", "delay_s", "re_amp", "im_amp"), rows)


def cmd_stats(args) -> None:
    cfg = _config(args, epsilon=args.epsilon)
    cfg.validate_order()
    scene = cfg.base_scene()
    if args.epsilon * scene.band.n_points < 1.0 or not 0.0 < args.epsilon <= 0.5:
        raise UsageError(f"--epsilon {args.epsilon} invalid for {scene.band.n_points} frequency points")
    _check_tx(scene, args.tx_id)
    ids = range(scene.n_tx) if args.tx_id is None else [args.tx_id]
    out = _out_dir(args)
    tracer = raytwin.Tracer(scene, args.max_order)
    qrows = []
    for i in ids:
        cdf = chanstats.EmpiricalCdf(raytwin.power_samples(scene, scene.tx_positions[i], tracer=tracer))
        x, y = scene.tx_positions[i]
        try:
            rho, q = chanstats.log_quantile(cdf, args.epsilon)
            qrows.append((i, x, y, args.epsilon, repr(rho), repr(q), 0))
        except chanstats.BlockedPositionError:
            qrows.append((i, x, y, args.epsilon, "0.0", "-inf", 1))
        if out:
            _write_csv(os.path.join(out, f"cdf_tx{i:03d}.csv"), ("power_db", "cdf"), cdf.to_rows())
    _write_csv(_join(out, "quantiles.csv"), ("tx_id", "x", "y", "epsilon", "rho", "q", "blocked"), qrows)


def _versions() -> dict:
    return {"geotwin": geotwin.__version__, "numpy": np.__version__, "scipy": scipy.__version__}


def report_dict(cfg: ex.ExperimentConfig, reports: list[ex.ExperimentReport]) -> dict:
    return {
        "config": cfg.to_dict(),
        "versions": _versions(),
        "summary": ex.pooled_summary(reports),
        "repetitions": [
            {
                "rep": r.rep,
                "seeds": r.seeds,
                "aggregates": r.aggregates(),
                "excluded": r.excluded,
                "hyperparameters": r.hyperparameters,
            }
            for r in reports
        ],
    }


def position_rows(report: ex.ExperimentReport):
    for r in sorted(report.records, key=lambda r: r.tx_id):
        row = []
        for c in ex.CSV_COLUMNS:
            v = getattr(r, c)
            row.append(int(v) if isinstance(v, bool) else repr(v) if isinstance(v, float) else v)
        yield row


def cmd_experiment(args) -> None:
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    cfg = _config(args, epsilon=args.epsilon, delta=args.delta, train_count=args.train_count, repetitions=args.reps)
    try:
        cfg.validate(cfg.base_scene())
    except ex.ConfigError as e:
        raise UsageError(str(e)) from e
    reports = ex.run_repetitions(cfg)
    out = _out_dir(args)
    text = json.dumps(report_dict(cfg, reports), sort_keys=True, indent=2) + "\n"
    if out:
        with open(os.path.join(out, "report.json"), "w") as fh:
            fh.write(text)
        for r in reports:
            rows = list(position_rows(r))
            _write_csv(os.path.join(out, f"positions_rep{r.rep:02d}.csv"), ex.CSV_COLUMNS, rows)
            if r.rep == 0:
                _write_csv(os.path.join(out, "positions.csv"), ex.CSV_COLUMNS, rows)
    else:
        sys.stdout.write(text)
    s = ex.pooled_summary(reports)["pooled_median_abs_error_db"]
    log.info("median abs error [dB]: direct %.3f spatial %.3f dt %.3f", s["direct"], s["spatial"], s["dt"])


def cmd_validate_wssus(args) -> None:
    if args.n_waves < 1 or args.realizations < 2:
        raise UsageError("--n-waves must be >= 1 and --realizations >= 2")
    rep = validation.validate_wssus(
        args.seed, n_waves=args.n_waves, n_realizations=args.realizations, convention=args.convention
    )
    text = json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n"
    out = _out_dir(args)
    if out:
        with open(os.path.join(out, "wssus.json"), "w") as fh:
            fh.write(text)
    for name, ok in rep.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=sys.stderr if not out else sys.stdout)
    if not out:
        sys.stdout.write(text)


def cmd_validate_proxy(args) -> None:
    cfg = _config(args, epsilon=args.epsilon)
    cfg.validate_order()
    rep = validation.validate_freq_proxy(cfg)
    out = _out_dir(args)
    rows = [(r.tx_id, repr(r.ks_distance), repr(r.quantile_gap_db), r.n_paths) for r in rep.rows]
    _write_csv(_join(out, "proxy.csv"), ("tx_id", "ks_distance", "quantile_gap_db", "n_paths"), rows)
    summary = {k: v for k, v in rep.to_dict().items() if k != "rows"}
    if out:
        with open(os.path.join(out, "proxy.json"), "w") as fh:
            fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    log.info("median gap %.3f dB, median KS %.4f", summary["median_quantile_gap_db"], summary["median_ks_distance"])


def cmd_gen_scene(args) -> None:
    cfg = ex.ExperimentConfig(seed=args.seed)
    scene = cfg.base_scene()
    if args.truth:
        scene = generate_twin_pair(scene, cfg.perturbation, ex.derive_seed(args.seed, "twin", 0)).truth
    if args.out:
        save_scene(scene, args.out)
    else:
        sys.stdout.write(serialize_scene(scene))


COMMANDS = {
    "trace": cmd_trace,
    "stats": cmd_stats,
    "experiment": cmd_experiment,
    "validate-wssus": cmd_validate_wssus,
    "validate-proxy": cmd_validate_proxy,
    "gen-scene": cmd_gen_scene,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (UsageError, ex.ConfigError) as e:
        print(f"geotwin: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SceneError, OSError, GpError, chanstats.BlockedPositionError, ValueError) as e:
        print(f"geotwin: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
