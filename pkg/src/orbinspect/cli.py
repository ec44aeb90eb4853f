"""Command-line entry points: run a scenario, sweep the information-weight
parameter, or render plots from a finished run directory."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config
from .simulate import run_scenario

__all__ = ["main", "sweep_gamma_c"]


def sweep_gamma_c(cfg, values, out_dir=None):
    """Run the scenario once per gamma_c value; returns per-value summaries
    with the median condition number of the active regression stack."""
    import numpy as np

    summaries = []
    for val in values:
        sub = None
        if out_dir is not None:
            sub = os.path.join(out_dir, f"gamma_c_{val:g}")
        cfg_i = load_config(None, {**cfg.to_dict(), "gamma_c": float(val)})
        result = run_scenario(cfg_i, out_dir=sub)
        cond = result.column("cond_active")
        cond = cond[np.isfinite(cond)]
        summaries.append(
            {
                "gamma_c": float(val),
                "median_cond": float(np.median(cond)) if len(cond) else float("inf"),
                "fault": result.fault,
                "inspected": result.inspected_final,
                "result": result,
            }
        )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write("# schema v1\n")
            fh.write("gamma_c,median_cond,inspected,fault\n")
            for s in summaries:
                fh.write(
                    f"{s['gamma_c']:.12g},{s['median_cond']:.12g},"
                    f"{s['inspected']},{int(bool(s['fault']))}\n"
                )
    return summaries


def _add_run_overrides(parser):
    parser.add_argument("--config", default=None, help="key = value config file")
    parser.add_argument("--duration", type=float, default=None, help="run length, s")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--barrier", choices=("on", "off"), default=None,
        help="enable or disable the safety correction",
    )
    parser.add_argument(
        "--regressor", choices=("windowed", "filtered"), default=None,
        help="regression-sample construction",
    )
    parser.add_argument("--out", default=None, help="artifact output directory")


def _overrides_from(args):
    ov = {"duration": args.duration, "seed": args.seed, "regressor": args.regressor}
    if args.barrier is not None:
        ov["barrier"] = args.barrier == "on"
    return ov


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="orbinspect",
        description="closed-loop on-orbit inspection simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_run_overrides(p_run)

    p_sweep = sub.add_parser("sweep", help="run a one-parameter sweep")
    _add_run_overrides(p_sweep)
    p_sweep.add_argument("--param", default="gamma_c", choices=("gamma_c",))
    p_sweep.add_argument(
        "--values", default="0,5,10,15,20",
        help="comma-separated parameter values",
    )

    p_plot = sub.add_parser("plot", help="render plots from a run directory")
    p_plot.add_argument("--metrics", required=True, help="run directory with CSVs")
    p_plot.add_argument("--out", default=None, help="plot output directory")

    args = parser.parse_args(argv)

    if args.command == "plot":
        from .plots import render_all

        written = render_all(args.metrics, args.out)
        for path in written:
            print(path)
        return 0

    cfg = load_config(args.config, _overrides_from(args))

    if args.command == "run":
        result = run_scenario(cfg, out_dir=args.out)
        summary = {
            "fault": result.fault,
            "inspected": result.inspected_final,
            "koz_violation": result.koz_violation,
            "kiz_violation": result.kiz_violation,
            "full_coverage_time": result.full_coverage_time,
            "wall_time_s": round(result.wall_time, 3),
            "out_dir": result.out_dir,
        }
        print(json.dumps(summary, indent=2))
        return 1 if result.fault else 0

    # sweep
    values = [float(v) for v in args.values.split(",") if v.strip()]
    summaries = sweep_gamma_c(cfg, values, args.out)
    any_fault = False
    for s in summaries:
        any_fault = any_fault or bool(s["fault"])
        print(
            json.dumps(
                {
                    "gamma_c": s["gamma_c"],
                    "median_cond": s["median_cond"],
                    "fault": s["fault"],
                    "inspected": s["inspected"],
                    "out_dir": s["result"].out_dir,
                }
            )
        )
    return 1 if any_fault else 0


if __name__ == "__main__":
    sys.exit(main())
