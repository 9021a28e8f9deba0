"""Command-line front end: fit, synth, utility, risk, simulate.

Configuration precedence is CLI flag > ``--config`` JSON file > preset >
built-in default.  Every report embeds the effective seed and a hash of the
effective configuration (output paths excluded, so the hash is stable across
working directories); dataset-producing commands write a ``manifest.json``
sidecar carrying the same pair.  Exit codes: 0 success, 1 configuration
problems, 2 failures inside a pipeline stage.  Logs go to stderr only.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .archive import load_archive, save_archive
from .factor_model import ChainConfig
from .risk import risk_study
from .schema import MixedDataset, load_dataset, load_schema, write_csv
from .simulation import (
    SimDesign,
    preset,
    run_ordinal_rl_study,
    run_rl_workaround_study,
    run_rpl_study,
)
from .streams import substream
from .synthesizer import SynthesisPlan, fit_copula_model, synthesize_datasets
from .target_regression import TargetConfig, fit_target_model, synthesize_response
from .utility import HorseshoeConfig, RegressionSpec, evaluate_utility

__all__ = ["main", "end_to_end", "ConfigError", "StageError"]

log = logging.getLogger("mixedsynth.cli")


class ConfigError(Exception):
    """Bad or missing configuration; maps to exit code 1."""


class StageError(Exception):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments; we reserve 2 for stage failures
    def error(self, message):
        raise ConfigError(message)


_UNHASHED_KEYS = {"out", "out_dir", "keep_datasets", "config"}

_PRESETS = {
    # copula chain length / targeted-regression settings at full study scale
    "paper": {"iters": 50000, "burn_in": 25000, "thin": 25,
              "target_iters": 1100, "target_burn_in": 100},
    "desk": {"iters": 3000, "burn_in": 1500, "thin": 5,
             "target_iters": 600, "target_burn_in": 100},
}


def _config_hash(cfg: dict) -> str:
    doc = {k: v for k, v in sorted(cfg.items()) if k not in _UNHASHED_KEYS}
    blob = json.dumps(doc, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _csv_list(value):
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [part.strip() for part in str(value).split(",") if part.strip()]


def _int_list(value):
    try:
        return [int(v) for v in _csv_list(value)]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list: {exc}")


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    given = {k: v for k, v in vars(args).items() if v is not None}
    given.pop("func", None)
    from_file = {}
    if given.get("config"):
        path = Path(given["config"])
        try:
            from_file = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file '{path}': {exc}")
        if not isinstance(from_file, dict):
            raise ConfigError(f"config file '{path}' must hold a JSON object")
    cfg = dict(defaults)
    preset_name = given.get("preset", from_file.get("preset"))
    if preset_name is not None and preset_name in _PRESETS:
        cfg.update(_PRESETS[preset_name])
    cfg.update(from_file)
    cfg.update(given)
    missing = [k for k in _REQUIRED[args.subcommand] if cfg.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ConfigError(f"missing required settings for '{args.subcommand}': {flags}")
    return cfg


def _require_seed(cfg: dict, command: str) -> int:
    if cfg.get("seed") is None:
        raise ConfigError(f"--seed is required for '{command}'")
    return int(cfg["seed"])


def _json_out(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_pool(cfg: dict, key: str, schema) -> tuple[list, list]:
    """Synthetic datasets from explicit paths and/or a directory of CSVs."""
    paths = [Path(p) for p in _csv_list(cfg.get(key))]
    if cfg.get(key + "_dir"):
        paths.extend(sorted(Path(cfg[key + "_dir"]).glob("*.csv")))
    if not paths:
        raise ConfigError(f"no synthetic datasets given (--{key} / --{key}-dir)")
    return [load_dataset(p, schema) for p in paths], paths


# ---------------------------------------------------------------- fit


def _cmd_fit(cfg: dict) -> dict:
    seed = _require_seed(cfg, "fit")
    schema = load_schema(cfg["schema"])
    targets = set(_csv_list(cfg.get("targets")))
    unknown = targets - {c.name for c in schema}
    if unknown:
        raise ConfigError(f"--targets names unknown columns: {sorted(unknown)}")
    schema = tuple(
        dataclasses.replace(c, role="response") if c.name in targets else c
        for c in schema
    )
    targets = [c.name for c in schema if c.role == "response"]
    ds = load_dataset(cfg["data"], schema)

    chain = ChainConfig(
        iters=int(cfg["iters"]),
        burn_in=int(cfg["burn_in"]),
        thin=int(cfg["thin"]),
        n_factors=None if cfg.get("factors") is None else int(cfg["factors"]),
        seed=seed,
    )
    log.info("fitting copula model on %d records, %d columns",
             ds.n, len(ds.copula_columns))
    model = fit_copula_model(ds, chain)

    summaries = {}
    for name in targets:
        log.info("fitting targeted regression for response '%s'", name)
        tc = TargetConfig(
            iters=int(cfg["target_iters"]),
            burn_in=int(cfg["target_burn_in"]),
            trees=int(cfg["target_trees"]),
            seed=seed,
        )
        summaries[name] = fit_target_model(ds, name, tc)

    out = cfg["out"]
    save_archive(out, model, targets=summaries, seed=seed, full_schema=schema,
                 extra_meta={"config_hash": _config_hash(cfg)})
    log.info("archive written to %s", out)
    return {"archive": str(out), "targets": targets}


# ---------------------------------------------------------------- synth


def _cmd_synth(cfg: dict) -> dict:
    seed = _require_seed(cfg, "synth")
    ar = load_archive(cfg["model"])
    plan = SynthesisPlan(
        ar.model,
        m=int(cfg["m"]),
        n_out=None if cfg.get("n_out") is None else int(cfg["n_out"]),
        seed=seed,
        draw_selection=cfg["draw_selection"],
    )
    sets = synthesize_datasets(plan)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = cfg["stem"]
    files = []
    for i, s in enumerate(sets):
        cols = dict(s.columns)
        for name, summary in ar.targets.items():
            rng = substream(seed, "target-synth", i, name)
            cols[name] = synthesize_response(summary, s, rng)
        full = MixedDataset(ar.full_schema, cols)
        path = out_dir / f"{stem}_syn_{i}.csv"
        write_csv(full, path)
        files.append(path.name)
    _json_out(out_dir / "manifest.json", {
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "model": str(cfg["model"]),
        "model_schema_hash": ar.schema_hash,
        "files": files,
    })
    log.info("wrote %d synthetic datasets to %s", len(files), out_dir)
    return {"files": [str(out_dir / f) for f in files]}


# ---------------------------------------------------------------- utility


def _cmd_utility(cfg: dict) -> dict:
    schema = load_schema(cfg["schema"])
    conf = load_dataset(cfg["conf"], schema)
    syn, _ = _load_pool(cfg, "syn", schema)
    if not cfg.get("response") or not cfg.get("predictors"):
        raise ConfigError("utility needs --response and --predictors")
    spec = RegressionSpec(
        response=cfg["response"],
        predictors=tuple(_csv_list(cfg["predictors"])),
        interactions=tuple(
            tuple(pair.split(":")) for pair in _csv_list(cfg.get("interactions"))
        ),
    )
    hc = HorseshoeConfig(
        iters=int(cfg["iters"]),
        burn_in=int(cfg["burn_in"]),
        seed=int(cfg.get("seed") or 0),
    )
    report = evaluate_utility(conf, syn, spec, hc)
    doc = {
        "config_hash": _config_hash(cfg),
        "seed": hc.seed,
        "m": len(syn),
        **report.to_doc(),
    }
    _json_out(cfg["out"], doc)
    log.info("utility report written to %s (U=%.4f)", cfg["out"], report.u)
    return doc


# ---------------------------------------------------------------- risk


def _cmd_risk(cfg: dict) -> dict:
    schema = load_schema(cfg["schema"])
    conf = load_dataset(cfg["conf"], schema)
    pool, _ = _load_pool(cfg, "pool", schema)
    known = tuple(_csv_list(cfg.get("known")))
    if not known or not cfg.get("target"):
        raise ConfigError("risk needs --known and --target")
    seed = int(cfg.get("seed") or 0)
    cells = risk_study(
        conf,
        pool,
        known=known,
        target=cfg["target"],
        m_grid=tuple(_int_list(cfg["m"])),
        eps_grid=tuple(_int_list(cfg["eps"])),
        reps=int(cfg["reps"]),
        seed=seed,
    )
    doc = {
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "known": list(known),
        "target": cfg["target"],
        "cells": [
            {
                "m": c.m,
                "n_known": c.n_known,
                "epsilon": c.epsilon,
                **dataclasses.asdict(c.report),
            }
            for c in cells
        ],
    }
    _json_out(cfg["out"], doc)
    log.info("risk report written to %s (%d cells)", cfg["out"], len(cells))
    return doc


# ---------------------------------------------------------------- simulate


_STUDIES = {
    "rpl": run_rpl_study,
    "rl": run_rl_workaround_study,
    "ordinal": run_ordinal_rl_study,
}


def _cmd_simulate(cfg: dict) -> dict:
    seed = _require_seed(cfg, "simulate")
    design, chain = preset(cfg["preset"], seed=seed)
    if cfg.get("reps") is not None:
        design = dataclasses.replace(design, n_reps=int(cfg["reps"]))
    names = _csv_list(cfg.get("studies")) or ["rpl", "rl", "ordinal"]
    bad = [s for s in names if s not in _STUDIES]
    if bad:
        raise ConfigError(f"unknown studies {bad}; choose from {sorted(_STUDIES)}")

    keep_dir = Path(cfg["keep_datasets"]) if cfg.get("keep_datasets") else None
    studies = {}
    for name in names:
        log.info("running %s study (n=%d, reps=%d)", name, design.n, design.n_reps)
        res = _STUDIES[name](design, chain, keep_data=keep_dir is not None)
        studies[name] = res.to_doc()
        if keep_dir is not None:
            sub = keep_dir / name
            sub.mkdir(parents=True, exist_ok=True)
            for i, s in enumerate(res.datasets):
                write_csv(s, sub / f"{name}_syn_{i}.csv")
    doc = {
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "preset": cfg["preset"],
        "design": dataclasses.asdict(design),
        "studies": studies,
    }
    if {"rpl", "rl"} <= studies.keys():
        doc["orderings"] = {
            "rl_mse_greater": studies["rl"]["avg_mse"] > studies["rpl"]["avg_mse"],
            "rpl_multi_rate_zero": studies["rpl"]["multi_rate"] == 0.0,
            "rl_multi_rate_over_5pct": studies["rl"]["multi_rate"] > 0.05,
        }
    _json_out(cfg["out"], doc)
    log.info("simulation summary written to %s", cfg["out"])
    return doc


# ---------------------------------------------------------------- wiring


_REQUIRED = {
    "fit": ("data", "schema", "out"),
    "synth": ("model", "out_dir"),
    "utility": ("conf", "schema", "out"),
    "risk": ("conf", "schema", "out"),
    "simulate": ("out",),
}

_DEFAULTS = {
    "fit": {"iters": 15000, "burn_in": 9000, "thin": 10, "target_iters": 1100,
            "target_burn_in": 100, "target_trees": 200},
    "synth": {"m": 1, "draw_selection": "round_robin", "stem": "data"},
    "utility": {"iters": 10000, "burn_in": 5000},
    "risk": {"m": "5,10,20", "eps": "0,1,2", "reps": 100},
    "simulate": {"preset": "desk"},
}

_HANDLERS = {
    "fit": _cmd_fit,
    "synth": _cmd_synth,
    "utility": _cmd_utility,
    "risk": _cmd_risk,
    "simulate": _cmd_simulate,
}


def _build_parser() -> _Parser:
    top = _Parser(prog="mixedsynth",
                  description="Synthetic mixed-data generation and evaluation")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="subcommand", required=True,
                             parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with defaults for this command")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", help="fit the copula model (and targeted regressions)")
    common(p)
    p.add_argument("--data", help="confidential CSV")
    p.add_argument("--schema", help="schema JSON")
    p.add_argument("--out", help="model archive path")
    p.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--factors", type=int, help="latent factors (default: p*/2 rule)")
    p.add_argument("--targets", help="comma-separated response columns")
    p.add_argument("--target-iters", dest="target_iters", type=int)
    p.add_argument("--target-burn-in", dest="target_burn_in", type=int)
    p.add_argument("--target-trees", dest="target_trees", type=int)

    p = sub.add_parser("synth", help="generate synthetic datasets from an archive")
    common(p)
    p.add_argument("--model", help="model archive from 'fit'")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--m", type=int, help="number of synthetic datasets")
    p.add_argument("--n-out", dest="n_out", type=int,
                   help="records per dataset (default: fitted size)")
    p.add_argument("--stem", help="output file stem")
    p.add_argument("--draw-selection", dest="draw_selection",
                   choices=("round_robin", "random"))

    p = sub.add_parser("utility", help="score analytic utility of a release")
    common(p)
    p.add_argument("--conf", help="confidential CSV")
    p.add_argument("--schema")
    p.add_argument("--syn", help="comma-separated synthetic CSVs")
    p.add_argument("--syn-dir", dest="syn_dir", help="directory of synthetic CSVs")
    p.add_argument("--response")
    p.add_argument("--predictors", help="comma-separated predictor columns")
    p.add_argument("--interactions", help="comma-separated a:b pairs")
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--out", help="JSON report path")

    p = sub.add_parser("risk", help="attribute-disclosure risk study")
    common(p)
    p.add_argument("--conf")
    p.add_argument("--schema")
    p.add_argument("--pool", help="comma-separated synthetic CSVs")
    p.add_argument("--pool-dir", dest="pool_dir")
    p.add_argument("--known", help="comma-separated known columns")
    p.add_argument("--target")
    p.add_argument("--m", help="comma-separated release sizes")
    p.add_argument("--eps", help="comma-separated integer slacks")
    p.add_argument("--reps", type=int)
    p.add_argument("--out")

    p = sub.add_parser("simulate", help="two-column benchmark study")
    common(p)
    p.add_argument("--preset", choices=("paper", "desk"))
    p.add_argument("--reps", type=int, help="override replicate count")
    p.add_argument("--studies", help="subset of rpl,rl,ordinal")
    p.add_argument("--keep-datasets", dest="keep_datasets",
                   help="directory to dump per-study synthetic CSVs")
    p.add_argument("--out")

    return top


def end_to_end(bundle: dict) -> dict:
    """Run fit -> synth -> utility -> risk from one configuration bundle.

    The bundle holds a section per stage plus shared ``seed`` and paths; each
    stage failure is re-raised as a StageError naming the stage.
    """
    results = {}
    for stage in ("fit", "synth", "utility", "risk"):
        section = bundle.get(stage)
        if section is None:
            continue
        cfg = dict(_DEFAULTS[stage])
        cfg.update({k: v for k, v in bundle.items()
                    if not isinstance(v, dict) and k != "subcommand"})
        cfg.update(section)
        try:
            results[stage] = _HANDLERS[stage](cfg)
        except ConfigError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
    return results


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    command = args.subcommand
    try:
        cfg = _merge_config(args, _DEFAULTS[command])
        _HANDLERS[command](cfg)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 1
    except Exception as exc:  # any stage/module failure
        log.error("%s failed: %s", command, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
