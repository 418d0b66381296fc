"""Command line entry point: ``gii simulate | estimate | mc | table``.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 acceptance target
missed (``mc --ci``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import harness as hx
from .models import MODEL_IDS, MODEL_INFO, ModelError, draw_shocks, generate_observed

log = logging.getLogger("gii")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_TARGET = 0, 2, 3, 4


def _floats(text):
    return [float(v) for v in text.split(",")]


def _common(p):
    p.add_argument("--config", help="experiment JSON (path or bundled name such as m1_r04)")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--reps", type=int, help="number of replications (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--model", choices=MODEL_IDS)
    p.add_argument("--beta", type=_floats, help="comma separated true / start parameters")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--aux", dest="aux_variant", choices=["#1", "#2", "#3", "#4"])
    p.add_argument("--criterion", choices=["Wald", "LR", "LM"])
    p.add_argument("--routine", choices=["GN", "QN_BFGS", "TR"])
    p.add_argument("--schedule", help="lambda:M pairs, e.g. 0.03:10,0.003:300")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="gii", description="Generalized indirect inference")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("simulate", help="simulate one dataset as CSV")
    _common(p)
    p.add_argument("--out", help="output CSV (default stdout)")

    p = sub.add_parser("estimate", help="estimate one dataset, print result JSON")
    _common(p)
    p.add_argument("--data", required=True, help="dataset CSV with header i,t,y...,x...")
    p.add_argument("--starts", type=int, default=4,
                   help="random multi-start points in addition to the neutral start")
    p.add_argument("--out", help="write the result JSON here as well")

    p = sub.add_parser("mc", help="Monte Carlo replications -> CSV and summary")
    _common(p)
    p.add_argument("--out", help="per-replication CSV (default <config name>.csv)")
    p.add_argument("--summary", help="summary JSON (default next to the CSV)")
    p.add_argument("--ci", action="store_true", help="exit 4 if a config target is missed")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("table", help="render a stored MC CSV as a Mean | Std.dev | Time table")
    _common(p)
    p.add_argument("--results", required=True, help="per-replication CSV written by mc")
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--label", default="GII")
    return ap


def _schedule(text):
    out = []
    for part in text.split(","):
        lam, M = part.split(":")
        out.append([float(lam), int(M)])
    return out


def experiment_from_args(a, need_beta=True) -> hx.ExperimentConfig:
    d = {}
    if a.config:
        path = hx.resolve_config_path(a.config)
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as e:
            raise hx.ConfigError(f"{path}: invalid JSON ({e})") from None
    for key in ("model", "n", "T", "s", "aux_variant", "criterion"):
        if getattr(a, key, None) is not None:
            d[key] = getattr(a, key)
    if a.beta is not None:
        d["beta0"] = a.beta
    if a.seed is not None:
        d["base_seed"] = a.seed
    if a.reps is not None:
        d["replications"] = a.reps
    if a.routine is not None:
        d.setdefault("optimizer", {})["routine"] = a.routine
    if a.schedule:
        try:
            d["step_schedule"] = _schedule(a.schedule)
        except ValueError:
            raise hx.ConfigError(f"bad --schedule {a.schedule!r}; use lam:M,lam:M") from None
    if "model" not in d:
        raise hx.ConfigError("no model given (use --config or --model)")
    if "beta0" not in d:
        if need_beta:
            raise hx.ConfigError("no parameters given (use --config or --beta)")
        d["beta0"] = [0.0] * len(MODEL_INFO[d["model"]].params)
    if "n" not in d:
        d["n"] = 1000
    return hx.ExperimentConfig.from_dict(d)


def cmd_simulate(a):
    x = experiment_from_args(a)
    cfg = x.structural()
    data = generate_observed(cfg, draw_shocks(cfg, 0, x.base_seed))
    if a.out:
        with open(a.out, "w", newline="") as fh:
            hx.write_dataset(data, fh)
    else:
        hx.write_dataset(data, sys.stdout)
    return EXIT_OK


def cmd_estimate(a):
    given_beta = a.beta is not None
    if a.config is None and a.n is None:
        a.n = 1  # replaced by the dataset size below
    with open(a.data, newline="") as fh:
        model = a.model
        if model is None and a.config:
            with open(hx.resolve_config_path(a.config)) as cf:
                model = json.load(cf).get("model")
        if model is None:
            raise hx.ConfigError("estimate needs --model or --config")
        s = a.s if a.s is not None else 0
        data = hx.read_dataset(fh, model, s)
    a.model, a.n, a.T = model, data.n, data.T
    x = experiment_from_args(a, need_beta=False)
    starts = hx.default_starts(x, x.base_seed, a.starts)
    if given_beta or a.config:
        starts = [np.asarray(x.beta0, dtype=float)] + starts
    res = hx.estimate_data(x, data, x.base_seed, starts)
    out = res.to_dict()
    text = json.dumps(out, indent=2)
    print(text)
    if a.out:
        with open(a.out, "w") as fh:
            fh.write(text + "\n")
    if res.status in ("failed", "inference_failed"):
        log.error("estimation failed: %s", res.error)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_mc(a):
    x = experiment_from_args(a)
    out = a.out or x.output or f"{x.name or x.model}.csv".replace(" ", "_").replace("#", "")
    summary_path = a.summary or os.path.splitext(out)[0] + ".summary.json"

    def progress(row):
        if not a.quiet:
            est = " ".join(f"{v:.4f}" for v in row["beta_hat"])
            print(f"rep {row['rep']:4d}  {est}  {row['status']}  {row['seconds']:.2f}s",
                  file=sys.stderr, flush=True)

    mc = hx.run_mc(x, threads=a.threads, progress=progress)
    with open(out, "w", newline="") as fh:
        mc.to_csv(fh)
    summary = mc.summary()
    checks = hx.check_targets(mc, x.targets)
    summary["targets"] = [{"check": c, "ok": ok, "detail": d} for c, ok, d in checks]
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(hx.render_table(mc, x.name or "GII"))
    agg = summary["aggregates"]
    print(f"replications {agg['R']}, flagged {agg['flagged']}, "
          f"converged share {agg['converged_share']:.3f}")
    for c, ok, d in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {c}: {d}")
    if a.ci and not all(ok for _, ok, _ in checks):
        return EXIT_TARGET
    return EXIT_OK


def cmd_table(a):
    with open(a.results, newline="") as fh:
        mc = hx.MCResult.from_csv(fh)
    sys.stdout.write(hx.render_table(mc, a.label, a.format))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc": cmd_mc, "table": cmd_table}


def main(argv=None):
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[a.cmd](a)
    except (hx.ConfigError, ModelError) as e:
        print(f"gii: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"gii: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"gii: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
