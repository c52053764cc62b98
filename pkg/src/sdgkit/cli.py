"""Command-line experiment harness.

    sdgkit <command> [--config PATH] [--seed U64] [--out DIR] [--trials N]
                     [--override-size-checks]

Commands: dims, fool, lowerbound, dpfool, sanitize, puc, audit.  Each reads
an optional JSON config (unknown keys are rejected), fills in defaults,
runs its trial grid and writes ``<command>.csv``, ``<command>.jsonl`` and
``<command>-summary.json`` under the output directory (``--out``, else
``$SDGKIT_OUT``, else ``./sdgkit-out``).  The exit status is 0 iff every
check passed, 1 if some check failed and 2 on bad input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from sdgkit import __version__
from sdgkit.concept import (
    SizeCapError,
    class_zoo,
    dimension_report,
    dual_littlestone_dimension,
    load_class,
    symmetrize,
)
from sdgkit.dp_fooling import (
    PipelineConfig,
    SizeCheckError,
    LabelImbalance,
    dp_fool,
    draw_labeled,
    pap_pac_from_puc,
    sanitize,
    true_losses,
)
from sdgkit.measures import Distribution, draw_sample, empirical, expect_all, ipm
from sdgkit.privacy import LearnerSpec, audit_exp_mech, audit_thresh
from sdgkit.rng import stream
from sdgkit.sequential import (
    FoolingParams,
    default_learner,
    generator_strategy,
    honest_discriminator,
    tree_adversary,
)

OUT_ENV = "SDGKIT_OUT"
DEFAULT_OUT = "sdgkit-out"
CSV_VERSION = 1
MAX_SEED = 2**64 - 1

CLASS_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "zoo": {"enum": ["cube", "thresholds", "singletons", "half_arcs", "random"]},
                "n": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
            "required": ["zoo", "n"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"file": {"type": "string"}},
            "required": ["file"],
            "additionalProperties": False,
        },
    ]
}

UNIT = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
COUNT = {"type": "integer", "minimum": 1}


def _schema(properties):
    return {"type": "object", "properties": properties, "additionalProperties": False}


SCHEMAS = {
    "dims": _schema({"class": CLASS_SCHEMA}),
    "fool": _schema({
        "class": CLASS_SCHEMA,
        "eps": {"type": "array", "items": UNIT, "minItems": 1},
        "trials": COUNT,
        "learner": {"enum": ["auto", "MW", "AgnosticSOA"]},
        "concentration": {"type": "number", "exclusiveMinimum": 0},
    }),
    "lowerbound": _schema({"class": CLASS_SCHEMA, "eps": UNIT, "trials": COUNT}),
    "dpfool": _schema({
        "class": CLASS_SCHEMA,
        "eps0": UNIT,
        "delta0": UNIT,
        "kappa": UNIT,
        "sample_size": COUNT,
        "trials": COUNT,
        "learner_alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    }),
    "sanitize": _schema({
        "class": CLASS_SCHEMA,
        "eps": UNIT,
        "delta": UNIT,
        "kappa": UNIT,
        "sample_size": COUNT,
        "trials": COUNT,
    }),
    "puc": _schema({
        "class": CLASS_SCHEMA,
        "eps": UNIT,
        "delta": UNIT,
        "kappa": UNIT,
        "sample_size": COUNT,
        "trials": COUNT,
    }),
    "audit": _schema({
        "mechanism": {"enum": ["exp_mech", "thresh"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "n_values": COUNT,
        "n_margin": COUNT,
        "trials": COUNT,
    }),
}

DEFAULTS = {
    "dims": {"class": {"zoo": "cube", "n": 3}},
    "fool": {"class": {"zoo": "thresholds", "n": 7}, "eps": [0.5, 0.3], "trials": 10,
             "learner": "auto", "concentration": 0.5},
    "lowerbound": {"class": {"zoo": "cube", "n": 3}, "eps": 0.4, "trials": 2000},
    "dpfool": {"class": {"zoo": "thresholds", "n": 7}, "eps0": 0.4, "delta0": 0.2, "kappa": 0.4,
               "sample_size": 20000, "trials": 20, "learner_alpha": 1.0},
    "sanitize": {"class": {"zoo": "singletons", "n": 4}, "eps": 0.3, "delta": 0.2, "kappa": 0.4,
                 "sample_size": 20000, "trials": 20},
    "puc": {"class": {"zoo": "thresholds", "n": 7}, "eps": 0.3, "delta": 0.2, "kappa": 0.4,
            "sample_size": 320000, "trials": 10},
    "audit": {"mechanism": "exp_mech", "alpha": 0.5, "n_values": 10, "n_margin": 5, "trials": 100000},
}


class ConfigError(ValueError):
    pass


def load_config(command, path=None, trials=None):
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        jsonschema.validate(user, SCHEMAS[command])
    except jsonschema.ValidationError as err:
        raise ConfigError(f"invalid {command} config: {err.message}") from err
    config = {**DEFAULTS[command], **user}
    if trials is not None and "trials" in config:
        config["trials"] = trials
    return config


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def build_class(spec):
    if "file" in spec:
        return load_class(spec["file"])
    return class_zoo(spec["zoo"], spec["n"], spec.get("k", 0), seed=spec.get("seed", 0))


def _dirichlet_target(rng, n, concentration):
    return Distribution(rng.dirichlet(np.full(n, concentration)))


def _r(x):
    """Round floats for stable, readable CSV cells."""
    return None if x is None else float(f"{x:.12g}")


# ---------------------------------------------------------------- commands
# Each returns (rows, transcripts, summary, ok).


def cmd_dims(config, seed, overrides):
    c = build_class(config["class"])
    report = dimension_report(c)
    row = {"rows": c.n_rows, "points": c.n_points, "fingerprint": c.fingerprint(), **report.to_dict()}
    return [row], [], row, report.bound_holds


def cmd_fool(config, seed, overrides):
    c = symmetrize(build_class(config["class"]))
    rows, lines, ok = [], [], True
    for eps in config["eps"]:
        params = FoolingParams.for_class(c, eps)
        for trial in range(config["trials"]):
            rng = stream(seed, "fool", repr(eps), trial)
            target = _dirichlet_target(rng, c.n_points, config["concentration"])
            learner = default_learner(c, params.horizon, config["learner"])
            tr = generator_strategy(c, params, learner, honest_discriminator(c, target, eps),
                                    target=target, seed=trial)
            check = tr.won and tr.n_rounds <= params.horizon and tr.final_ipm <= eps + 1e-12
            ok &= check
            rows.append({
                "trial": trial, "eps": eps, "rounds": tr.n_rounds, "horizon": params.horizon,
                "outcome": tr.outcome, "final_ipm": _r(tr.final_ipm), "learner": tr.learner,
                "else_rounds": tr.summary()["else_rounds"], "check": check,
            })
            for record in tr.rounds:
                lines.append({"trial": trial, "eps": eps, **record.to_dict()})
    summary = {
        "fingerprint": c.fingerprint(),
        "dual_ldim": dual_littlestone_dimension(c),
        "games": len(rows),
        "max_rounds": max(r["rounds"] for r in rows),
        "all_won_within_horizon": ok,
    }
    return rows, lines, summary, ok


def cmd_lowerbound(config, seed, overrides):
    c = symmetrize(build_class(config["class"]))
    eps = config["eps"]
    params = FoolingParams.for_class(c, eps)
    rows, lines = [], []
    for trial in range(config["trials"]):
        oracle, target = tree_adversary(c, eps, stream(seed, "lowerbound", trial))
        learner = default_learner(c, params.horizon)
        tr = generator_strategy(c, params, learner, oracle, target=target, seed=trial)
        rows.append({"trial": trial, "leaf": oracle.leaf, "point": oracle.point,
                     "rounds": tr.n_rounds, "ell": params.ell})
        for record in tr.rounds:
            lines.append({"trial": trial, **record.to_dict()})
    rounds = np.array([r["rounds"] for r in rows], dtype=float)
    stderr = float(rounds.std(ddof=1) / math.sqrt(rounds.size)) if rounds.size > 1 else 0.0
    mean = float(rounds.mean())
    ok = mean >= params.ell / 2 - 3 * stderr
    summary = {"mean_rounds": mean, "stderr": stderr, "ell": params.ell,
               "threshold": params.ell / 2 - 3 * stderr, "check": ok}
    return rows, lines, summary, ok


def cmd_dpfool(config, seed, overrides):
    c = build_class(config["class"])
    cfg = PipelineConfig(config["eps0"], config["delta0"], config["kappa"],
                         LearnerSpec(alpha=config["learner_alpha"]), overrides)
    rows, lines, ok, close = [], [], True, 0
    for trial in range(config["trials"]):
        rng = stream(seed, "dpfool", trial)
        real = _dirichlet_target(rng, c.n_points, 1.0)
        s = draw_sample(real, config["sample_size"], rng)
        run = dp_fool(c, s, cfg, rng)
        report = run.report(p_sample=empirical(s), p_real=real, c=c)
        total = run.ledger.total()
        check = run.ledger.verify() and total == run.closed_form
        ok &= check
        close += report["ipm_to_sample"] <= config["eps0"] / 2
        rows.append({
            "trial": trial, "rounds": run.transcript.n_rounds, "horizon": run.rounds,
            "outcome": run.transcript.outcome, "ipm_to_sample": _r(report["ipm_to_sample"]),
            "ipm_to_real": _r(report["ipm_to_real"]), "alpha_total": _r(float(total.alpha)),
            "beta_total": _r(total.beta), "check": check,
        })
        lines.append({"trial": trial, "report": report})
    summary = {"fraction_within_half_eps0": close / config["trials"], "ledgers_close": ok,
               "size_checks": [chk.to_dict() for chk in run.checks]}
    return rows, lines, summary, ok


def cmd_sanitize(config, seed, overrides):
    c = build_class(config["class"])
    rows, lines, ok, good = [], [], True, 0
    for trial in range(config["trials"]):
        rng = stream(seed, "sanitize", trial)
        s = draw_sample(_dirichlet_target(rng, c.n_points, 1.0), config["sample_size"], rng)
        out = sanitize(c, s, config["eps"], config["delta"], config["kappa"], rng, overrides=overrides)
        error = float(np.max(np.abs(out.est - expect_all(c, empirical(s)))))
        check = out.ledger.verify()
        ok &= check
        good += error <= config["eps"]
        total = out.ledger.total()
        rows.append({"trial": trial, "max_error": _r(error), "alpha_total": _r(float(total.alpha)),
                     "beta_total": _r(total.beta), "check": check})
        lines.append({"trial": trial, "est": out.est.tolist(), "ledger": out.ledger.to_dict()})
    return rows, lines, {"fraction_within_eps": good / config["trials"], "ledgers_close": ok}, ok


def cmd_puc(config, seed, overrides):
    c = build_class(config["class"])
    rows, lines, ok, good = [], [], True, 0
    for trial in range(config["trials"]):
        rng = stream(seed, "puc", trial)
        joint = rng.dirichlet(np.ones(2 * c.n_points)).reshape(c.n_points, 2)
        s = draw_labeled(joint, config["sample_size"], rng)
        result = pap_pac_from_puc(c, s, config["eps"], config["delta"], rng,
                                  kappa=config["kappa"], overrides=overrides)
        losses = true_losses(c, joint)
        error = float(np.max(np.abs(result.report.l_hat - losses)))
        excess = float(losses[result.index] - losses.min())
        check = result.report.ledger.verify()
        ok &= check
        good += error <= config["eps"]
        total = result.report.ledger.total()
        rows.append({
            "trial": trial, "sigma": result.report.sigma, "p_sigma": _r(result.report.p_sigma),
            "max_error": _r(error), "erm_index": result.index, "excess_loss": _r(excess),
            "alpha_total": _r(float(total.alpha)), "beta_total": _r(total.beta), "check": check,
        })
        lines.append({"trial": trial, "report": result.report.to_dict()})
    return rows, lines, {"fraction_within_eps": good / config["trials"], "ledgers_close": ok}, ok


def cmd_audit(config, seed, overrides):
    rng = stream(seed, "audit", config["mechanism"])
    if config["mechanism"] == "exp_mech":
        report = audit_exp_mech(config["alpha"], config["trials"], rng)
    else:
        report = audit_thresh(config["n_values"], config["n_margin"], config["trials"], rng)
    rows = [{"event": e["event"], "count_a": e["count_a"], "count_b": e["count_b"],
             "log_ratio": _r(e["log_ratio"]), "lower": _r(e["lower"])} for e in report.events]
    summary = report.to_dict()
    summary.pop("events")
    return rows, [], summary, not report.violation


COMMANDS = {
    "dims": cmd_dims,
    "fool": cmd_fool,
    "lowerbound": cmd_lowerbound,
    "dpfool": cmd_dpfool,
    "sanitize": cmd_sanitize,
    "puc": cmd_puc,
    "audit": cmd_audit,
}


# ---------------------------------------------------------------- output


def render_csv(rows, header):
    buf = io.StringIO()
    buf.write(header)
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def write_outputs(out, command, rows, lines, summary, header):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.csv").write_text(render_csv(rows, header))
    (out / f"{command}.jsonl").write_text("".join(json.dumps(x, sort_keys=True) + "\n" for x in lines))
    (out / f"{command}-summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def _seed(text):
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="sdgkit", description="synthetic data generation experiments")
    parser.add_argument("--version", action="version", version=f"sdgkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=_seed, default=0)
        p.add_argument("--out", type=Path)
        p.add_argument("--override-size-checks", action="store_true")
        p.add_argument("--trials", type=_positive)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    try:
        config = load_config(args.command, args.config, args.trials)
        rows, lines, summary, ok = COMMANDS[args.command](config, args.seed, args.override_size_checks)
    except (ConfigError, SizeCheckError, SizeCapError, LabelImbalance, ValueError) as err:
        print(f"sdgkit {args.command}: {err}", file=sys.stderr)
        return 2
    header = (
        f"# sdgkit {__version__} csv-version {CSV_VERSION} config {config_hash(config)} "
        f"seed {args.seed} command {args.command}\n"
    )
    summary = {"command": args.command, "config": config, "seed": args.seed, "ok": ok, **summary}
    write_outputs(out, args.command, rows, lines, summary, header)
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
