"""Command-line interface wiring JSON configs to the library operations."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

import jsonschema

from . import bench
from .core import (
    EvaluationDataset,
    HistoricalDataset,
    MixturePolicy,
    Policy,
    TablePolicy,
    UniformPolicy,
)
from .estimators import (
    dm_estimate,
    drcs_estimate,
    efficiency_bound_tabular,
    ipwcs_estimate,
    self_normalized,
    standard_bound_tabular,
)
from .opl import OplConfig, SoftmaxKernelPolicy, train_policy
from .regression import fit_outcome_krr, fit_outcome_nw, fit_behavior_nw
from .synthetic import TabularDGP, demo_dgp, demo_policy, exact_policy_value, \
    misspecify, oracle_nuisances, sample_datasets

log = logging.getLogger("covshift")

POLICY_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {"type": {"const": "uniform"}, "action_count": {"type": "integer", "minimum": 1}},
            "required": ["type", "action_count"],
            "additionalProperties": False,
        },
        {
            "properties": {"type": {"const": "table"}, "table": {"type": "array"}},
            "required": ["type", "table"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "type": {"const": "softmax_kernel"},
                "centers": {"type": "array"},
                "sigma2": {"type": "number"},
                "beta": {"type": "array"},
                "beta0": {"type": "array"},
                "action_count": {"type": "integer"},
            },
            "required": ["type", "centers", "sigma2", "beta", "beta0"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "type": {"const": "mixture"},
                "base": {"type": "object"},
                "uniform_weight": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "required": ["type", "base", "uniform_weight"],
            "additionalProperties": False,
        },
    ],
}

OPL_SCHEMA = {
    "type": "object",
    "properties": {
        "sigma2_grid": {"type": "array", "items": {"type": "number"}},
        "lam_grid": {"type": "array", "items": {"type": "number"}},
        "n_folds": {"type": "integer", "minimum": 2},
        "cv_folds": {"type": "integer", "minimum": 2},
        "center_count": {"type": "integer", "minimum": 1},
        "step_size": {"type": "number"},
        "max_iter": {"type": "integer", "minimum": 1},
        "tol": {"type": "number"},
        "line_search": {"type": "boolean"},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

BENCH_SCHEMA = {
    "type": "object",
    "properties": {
        "data": {"type": "string"},
        "out": {"type": "string"},
        "sample_budget": {"type": "integer", "minimum": 2},
        "n_replications": {"type": "integer", "minimum": 1},
        "alphas": {"type": "array", "items": {"type": "number"}},
        "eval_mixture": {"type": "number"},
        "hist_fraction": {"type": "number"},
        "noise_scale": {"type": "number"},
        "seed": {"type": "integer"},
        "estimators": {"type": "array", "items": {"type": "string"}},
        "opl_estimators": {"type": "array", "items": {"type": "string"}},
        "opl_trials": {"type": "integer", "minimum": 1},
        "opl": OPL_SCHEMA,
    },
    "additionalProperties": False,
}

EVALUATE_SCHEMA = {
    "type": "object",
    "properties": {
        "data": {"type": "string"},
        "out": {"type": "string"},
        "policy": POLICY_SCHEMA,
        "estimators": {"type": "array", "items": {"type": "string"}},
        "n_folds": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer"},
    },
    "required": ["policy"],
    "additionalProperties": False,
}

LEARN_SCHEMA = {
    "type": "object",
    "properties": {
        "data": {"type": "string"},
        "out": {"type": "string"},
        "estimator": {"type": "string", "enum": ["DRCS", "IPWCS", "DM"]},
        "action_count": {"type": "integer", "minimum": 1},
        "opl": OPL_SCHEMA,
    },
    "additionalProperties": False,
}

BANDIT_DATA_SCHEMA = {
    "type": "object",
    "properties": {
        "historical": {
            "type": "object",
            "properties": {
                "covariates": {"type": "array"},
                "actions": {"type": "array"},
                "rewards": {"type": "array"},
                "reward_max": {"type": "number"},
            },
            "required": ["covariates", "actions", "rewards"],
            "additionalProperties": False,
        },
        "evaluation": {
            "type": "object",
            "properties": {"covariates": {"type": "array"}},
            "required": ["covariates"],
            "additionalProperties": False,
        },
    },
    "required": ["historical", "evaluation"],
    "additionalProperties": False,
}


class ValidationFailure(Exception):
    """User input failed validation; maps to exit code 1."""


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationFailure(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"{path}: invalid JSON: {exc}") from exc


def _validate(doc: dict, schema: dict, what: str) -> dict:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise ValidationFailure(f"invalid {what}: {exc.message}") from exc
    return doc


def policy_from_json(doc: dict) -> Policy:
    kind = doc.get("type")
    if kind == "uniform":
        return UniformPolicy(doc["action_count"])
    if kind == "table":
        return TablePolicy(np.asarray(doc["table"], dtype=float))
    if kind == "softmax_kernel":
        return SoftmaxKernelPolicy.from_json(doc)
    if kind == "mixture":
        return MixturePolicy(policy_from_json(doc["base"]), doc["uniform_weight"])
    raise ValidationFailure(f"unknown policy type: {kind!r}")


def _load_bandit_data(path: str) -> tuple[HistoricalDataset, EvaluationDataset]:
    doc = _validate(_load_json(path), BANDIT_DATA_SCHEMA, "bandit data")
    hist_doc = doc["historical"]
    hist = HistoricalDataset(
        covariates=np.asarray(hist_doc["covariates"], dtype=float),
        actions=np.asarray(hist_doc["actions"], dtype=int),
        rewards=np.asarray(hist_doc["rewards"], dtype=float),
        reward_max=float(hist_doc.get("reward_max", 1.0)),
    )
    evl = EvaluationDataset(np.asarray(doc["evaluation"]["covariates"], dtype=float))
    return hist, evl


def _write_or_print(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        log.info("wrote %s", out)
    else:
        print(text)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _validate(_load_json(args.config), EVALUATE_SCHEMA, "evaluate config")
    data_path = args.data or config.get("data")
    if not data_path:
        raise ValidationFailure("evaluate requires --data or a 'data' config entry")
    hist, evl = _load_bandit_data(data_path)
    policy = policy_from_json(config["policy"])
    n_actions = policy.action_count
    estimators = config.get("estimators", ["DRCS", "DM", "IPWCS"])
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    n_folds = config.get("n_folds", 2)
    results: dict[str, object] = {}
    drcs_fitter = bench.make_drcs_fitter(n_actions)
    for name in estimators:
        if name == "DRCS":
            results[name] = drcs_estimate(hist, evl, policy, drcs_fitter,
                                          n_folds=n_folds, seed=seed).to_json()
        elif name == "DRCS-SN":
            results[name] = self_normalized(
                "DRCS-SN", hist, evl, policy, nuisance_fitter=drcs_fitter,
                n_folds=n_folds, seed=seed).to_json()
        elif name == "DM":
            model = fit_outcome_nw(hist, n_actions=n_actions)
            results[name] = dm_estimate(model.predict, policy, evl)
        elif name == "DM-R":
            model = fit_outcome_krr(hist, n_actions=n_actions)
            results[name] = dm_estimate(model.predict, policy, evl)
        elif name in ("IPWCS", "IPWCS-R"):
            if name == "IPWCS":
                ratio = bench.make_kde_ratio(hist.covariates, evl.covariates, 10.0)
            else:
                from .density_ratio import fit_kulsif
                ratio = fit_kulsif(hist.covariates, evl.covariates).predict
            behavior = fit_behavior_nw(hist, n_actions=n_actions)
            results[name] = ipwcs_estimate(ratio, behavior, policy, hist)
        else:
            raise ValidationFailure(f"unknown estimator: {name!r}")
    _write_or_print({"estimates": results}, args.out or config.get("out"))
    return 0


def _cmd_learn(args: argparse.Namespace) -> int:
    config = _validate(_load_json(args.config), LEARN_SCHEMA, "learn config")
    data_path = args.data or config.get("data")
    if not data_path:
        raise ValidationFailure("learn requires --data or a 'data' config entry")
    hist, evl = _load_bandit_data(data_path)
    opl_doc = dict(config.get("opl", {}))
    if args.seed is not None:
        opl_doc["seed"] = args.seed
    if "sigma2_grid" in opl_doc:
        opl_doc["sigma2_grid"] = tuple(opl_doc["sigma2_grid"])
    if "lam_grid" in opl_doc:
        opl_doc["lam_grid"] = tuple(opl_doc["lam_grid"])
    opl_config = OplConfig(**opl_doc)
    kind = config.get("estimator", "DRCS")
    action_count = config.get("action_count", int(hist.actions.max()) + 1)
    fitters = {
        "DRCS": bench.make_drcs_fitter(action_count),
        "IPWCS": bench.make_ipwcs_fitter(action_count),
        "DM": bench.make_dm_fitter(action_count),
    }
    policy = train_policy(hist, evl, opl_config, kind, fitters[kind], action_count=action_count)
    doc = policy.to_json()
    doc["type"] = "softmax_kernel"
    _write_or_print(doc, args.out or config.get("out"))
    return 0


def _bench_config_from(doc: dict, args: argparse.Namespace) -> bench.BenchConfig:
    doc = dict(doc)
    doc.pop("data", None)
    doc.pop("out", None)
    opl_doc = dict(doc.pop("opl", {}))
    if "sigma2_grid" in opl_doc:
        opl_doc["sigma2_grid"] = tuple(opl_doc["sigma2_grid"])
    if "lam_grid" in opl_doc:
        opl_doc["lam_grid"] = tuple(opl_doc["lam_grid"])
    for key in ("alphas", "estimators", "opl_estimators"):
        if key in doc:
            doc[key] = tuple(doc[key])
    if args.seed is not None:
        doc["seed"] = args.seed
    base_opl = OplConfig(max_iter=300, tol=1e-5)
    if opl_doc:
        merged = {**base_opl.__dict__, **opl_doc}
        doc["opl"] = OplConfig(**merged)
    try:
        return bench.BenchConfig(**doc)
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"invalid benchmark config: {exc}") from exc


def _cmd_bench(args: argparse.Namespace, kind: str) -> int:
    doc = _validate(_load_json(args.config), BENCH_SCHEMA, "benchmark config") if args.config else {}
    data_path = args.data or doc.get("data")
    if not data_path:
        raise ValidationFailure("benchmark commands require --data or a 'data' config entry")
    out_path = args.out or doc.get("out")
    if not out_path:
        raise ValidationFailure("benchmark commands require --out or an 'out' config entry")
    config = _bench_config_from(doc, args)
    data = bench.load_libsvm(data_path)
    if config.sample_budget > len(data):
        raise ValidationFailure("sample_budget exceeds the dataset size")
    jobs = args.jobs or (os.cpu_count() or 1)
    runner = bench.run_ope_experiment if kind == "ope" else bench.run_opl_experiment
    result = runner(data, config, jobs=jobs)
    result.to_csv(out_path, timestamp=not args.no_timestamp)
    result.to_json(out_path + ".json")
    log.info("wrote %s and %s", out_path, out_path + ".json")
    return 0


def _cmd_synth_check(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    dgp = demo_dgp()
    policy = demo_policy()
    truth = exact_policy_value(dgp, policy)
    bound = efficiency_bound_tabular(dgp, policy)
    print(f"exact policy value        : {truth:.6f}")
    print(f"efficiency bound          : {bound:.6f}")

    ok = True

    n, reps = 2000, 2000
    rng = np.random.default_rng(seed)
    fitter = lambda h, e: oracle_nuisances(dgp)
    errors = np.empty(reps)
    for i in range(reps):
        hist, evl = sample_datasets(dgp, n, seed=rng)
        report = drcs_estimate(hist, evl, policy, fitter, n_folds=2, seed=i)
        errors[i] = (report.estimate - truth) ** 2
    scaled_mse = n * float(errors.mean())
    ratio = scaled_mse / bound
    passed = abs(ratio - 1.0) <= 0.15
    ok &= passed
    print(f"scaled Monte Carlo MSE    : {scaled_mse:.6f}")
    print(f"ratio to bound            : {ratio:.4f}  [{'PASS' if passed else 'FAIL'}]")

    no_shift = TabularDGP(p=dgp.p, q=dgp.p, behavior=dgp.behavior,
                          success=dgp.success, rho=0.5)
    lhs = efficiency_bound_tabular(no_shift, policy)
    rhs = 2.0 * standard_bound_tabular(no_shift, policy)
    passed = abs(lhs - rhs) <= 1e-12
    ok &= passed
    print(f"no-shift bound reduction  : {lhs:.12f} vs {rhs:.12f}  "
          f"[{'PASS' if passed else 'FAIL'}]")

    wrong_outcome = misspecify(oracle_nuisances(dgp).outcome, "scale", 0.5)
    biased_fitter = lambda h, e: oracle_nuisances(dgp, outcome=wrong_outcome)
    reps_dr, n_dr = 200, 4000
    estimates = np.empty(reps_dr)
    for i in range(reps_dr):
        hist, evl = sample_datasets(dgp, n_dr, seed=rng)
        estimates[i] = drcs_estimate(hist, evl, policy, biased_fitter, seed=i).estimate
    bias = abs(float(estimates.mean()) - truth)
    passed = bias < 0.02
    ok &= passed
    print(f"robustness to wrong model : bias {bias:.5f}  [{'PASS' if passed else 'FAIL'}]")

    print("overall                   :", "PASS" if ok else "FAIL")
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covshift",
        description="Off-policy evaluation and learning under covariate shift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    specs = {
        "evaluate": "run the value estimators on logged bandit data",
        "learn": "train a softmax kernel policy and write it as JSON",
        "bench-ope": "reproduce the evaluation benchmark table",
        "bench-opl": "reproduce the learning benchmark table",
        "synth-check": "run the exact tabular self-checks",
    }
    for name, help_text in specs.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a JSON config file")
        p.add_argument("--data", help="path to the input data file")
        p.add_argument("--out", help="path of the output file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None,
                       help="worker processes (default: logical cores)")
        p.add_argument("--no-timestamp", action="store_true",
                       help="omit the timestamp header from CSV output")
    return parser


def dispatch(argv: list[str] | None = None) -> int:
    level = os.environ.get("COVSHIFT_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        if args.command == "evaluate":
            if not args.config:
                raise ValidationFailure("evaluate requires --config")
            return _cmd_evaluate(args)
        if args.command == "learn":
            if not args.config:
                raise ValidationFailure("learn requires --config")
            return _cmd_learn(args)
        if args.command == "bench-ope":
            return _cmd_bench(args, "ope")
        if args.command == "bench-opl":
            return _cmd_bench(args, "opl")
        if args.command == "synth-check":
            return _cmd_synth_check(args)
        raise ValidationFailure(f"unknown command {args.command!r}")
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.exception("command failed")
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
