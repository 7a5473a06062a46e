"""Command-line surface: simulate, fit, benchmark, predict.

Every run resolves a flat dotted-key config (file values overridden by
flags, flags overridden by nothing) and echoes the resolved config into
the output directory, so any emitted number is recomputable from that
echo alone. Exit codes: 0 success, 1 usage error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataio
from .bench import KNOWN_METHODS, ExperimentConfig, MetricsReport, run_benchmark
from .data import Dataset, SeededRng, augment_instruments
from .errors import DataError, NumericalError
from .ivreg import (
    dpls_iv_fit,
    estimate_tobit_constants,
    gmm_beta,
    identity_constants,
    recenter_outcome,
    sample_posterior,
)
from .linear import fit_lasso, fit_ols, fit_ridge
from .network import DplsConfig, SgdParams
from .pls import fit_pls_closed_form, select_q_cv
from .synthetic import experiment1_spec, experiment2_spec, gen_experiment1, gen_experiment2

__all__ = ["main"]

_PLS_Q_CAP = 30

_SPEC_DEFAULTS = {
    "dgp": "experiment1",
    "spec.n": "1000",
    "spec.m": "50",
    "spec.m_redundant": "10",
    "spec.k": "25",
    "spec.k_null": "20",
    "spec.sigma_eps": "0.5",
    "spec.coef_seed": "28",
    "spec.cov_param": "auto",
    "spec.edges_per_node": "2",
}

_DPLS_DEFAULTS = {
    "dpls.widths": "30",
    "dpls.q": "auto",
    "dpls.epochs": "200",
    "dpls.learning_rate": "0.001",
    "dpls.batch_size": "32",
}

_DEFAULTS = {
    "simulate": {**_SPEC_DEFAULTS, "seed": "0"},
    "fit": {
        "data": "",
        "method": "dpls_iv",
        "mode": "rescale_gmm",
        "censored": "true",
        **_DPLS_DEFAULTS,
        "seed": "0",
    },
    "benchmark": {
        **_SPEC_DEFAULTS,
        **_DPLS_DEFAULTS,
        "methods": ",".join(KNOWN_METHODS),
        "mode": "rescale_gmm",
        "censored": "true",
        "replications": "10",
        "test_fraction": "0.5",
        "jobs": "1",
        "seed": "0",
    },
    "predict": {
        "fit": "",
        "data": "",
        "draws": "0",
        "level": "0.95",
        "seed": "0",
    },
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; the documented code is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="dpls-iv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate a synthetic dataset plus its truth sidecar"),
        ("fit", "fit one method on one dataset; emit fit record and predictions"),
        ("benchmark", "replicated train/test study over methods"),
        ("predict", "load a fit record, emit predictions for a dataset"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="dotted-key config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=".", help="output directory")
        if name == "fit":
            p.add_argument("--method", choices=KNOWN_METHODS, default=None)
            p.add_argument(
                "--mode", choices=("rescale_gmm", "control_function"), default=None
            )
        if name == "benchmark":
            p.add_argument("--method", choices=KNOWN_METHODS, default=None,
                           help="restrict the study to a single method")
            p.add_argument(
                "--mode", choices=("rescale_gmm", "control_function"), default=None
            )
            p.add_argument("--replications", type=int, default=None)
            p.add_argument("--jobs", type=int, default=None)
        if name == "predict":
            p.add_argument("--draws", type=int, default=None,
                           help="posterior draws for predictive intervals")
    return parser


def _resolve_config(command: str, args) -> dict[str, str]:
    resolved = dict(_DEFAULTS[command])
    if args.config is not None:
        loaded = dataio.read_config(args.config)
        unknown = sorted(set(loaded) - set(resolved))
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        resolved.update(loaded)
    overrides = {
        "seed": getattr(args, "seed", None),
        "method": getattr(args, "method", None),
        "mode": getattr(args, "mode", None),
        "replications": getattr(args, "replications", None),
        "jobs": getattr(args, "jobs", None),
        "draws": getattr(args, "draws", None),
    }
    for key, value in overrides.items():
        if value is not None and key in resolved:
            resolved[key] = str(value)
    if getattr(args, "method", None) is not None and "methods" in resolved:
        resolved["methods"] = str(args.method)
    return resolved


def _as_int(cfg, key) -> int:
    try:
        return int(cfg[key])
    except ValueError:
        raise DataError(f"config key {key} must be an integer, got {cfg[key]!r}")


def _as_float(cfg, key) -> float:
    try:
        return float(cfg[key])
    except ValueError:
        raise DataError(f"config key {key} must be a real, got {cfg[key]!r}")


def _as_bool(cfg, key) -> bool:
    value = cfg[key].lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise DataError(f"config key {key} must be true or false, got {cfg[key]!r}")


def _spec_from_config(cfg):
    dgp = cfg["dgp"]
    if dgp not in ("experiment1", "experiment2"):
        raise DataError(f"dgp must be experiment1 or experiment2, got {dgp!r}")
    build = experiment1_spec if dgp == "experiment1" else experiment2_spec
    overrides = dict(
        n=_as_int(cfg, "spec.n"),
        m=_as_int(cfg, "spec.m"),
        m_redundant=_as_int(cfg, "spec.m_redundant"),
        k=_as_int(cfg, "spec.k"),
        k_null=_as_int(cfg, "spec.k_null"),
        sigma_eps=_as_float(cfg, "spec.sigma_eps"),
        coef_seed=_as_int(cfg, "spec.coef_seed"),
        edges_per_node=_as_int(cfg, "spec.edges_per_node"),
    )
    if cfg["spec.cov_param"] != "auto":
        overrides["cov_param"] = _as_float(cfg, "spec.cov_param")
    return dgp, build(**overrides)


def _dpls_from_config(cfg, seed: int) -> DplsConfig:
    widths = tuple(
        int(w) for w in cfg["dpls.widths"].split(",") if w.strip() != ""
    )
    q = cfg["dpls.q"]
    if q != "auto":
        q = _as_int(cfg, "dpls.q")
    return DplsConfig(
        layer_widths=widths,
        first_layer_q=q,
        sgd=SgdParams(
            learning_rate=_as_float(cfg, "dpls.learning_rate"),
            batch_size=_as_int(cfg, "dpls.batch_size"),
            epochs=_as_int(cfg, "dpls.epochs"),
            seed=seed,
        ),
    )


def _echo_config(out_dir: str, cfg: dict) -> None:
    dataio.write_config(os.path.join(out_dir, "config.txt"), cfg)


def _cmd_simulate(args) -> int:
    cfg = _resolve_config("simulate", args)
    dgp, spec = _spec_from_config(cfg)
    seed = _as_int(cfg, "seed")
    gen = gen_experiment1 if dgp == "experiment1" else gen_experiment2
    ds, truth = gen(spec, SeededRng(seed).child(0))
    os.makedirs(args.out_dir, exist_ok=True)
    dataio.csv_write(os.path.join(args.out_dir, "data.csv"), ds)
    dataio.write_truth(os.path.join(args.out_dir, "truth.json"), truth)
    _echo_config(args.out_dir, cfg)
    print(f"simulate: wrote {len(ds.y)} rows to {args.out_dir}/data.csv")
    return 0


def _fit_baseline(method: str, ds: Dataset, cfg, seed: int):
    """First-stage fit for a linear method; returns (coef, p_hat)."""
    zbar = augment_instruments(ds.z, ds.x).zbar
    if method == "ols":
        fit = fit_ols(zbar, ds.p)
    elif method == "ridge":
        fit = fit_ridge(zbar, ds.p, lam="auto")
    elif method == "lasso":
        fit = fit_lasso(zbar, ds.p, lam="auto")
    else:
        q = cfg["dpls.q"]
        if q == "auto":
            q = select_q_cv(
                zbar, ds.p, min(zbar.shape[1], _PLS_Q_CAP), 5,
                SeededRng(seed).child(7),
            )
        else:
            q = _as_int(cfg, "dpls.q")
        fit = fit_pls_closed_form(zbar, ds.p, q)
    return fit.coef, fit.predict(zbar)


def _cmd_fit(args) -> int:
    cfg = _resolve_config("fit", args)
    if cfg["data"] == "":
        raise _UsageError("fit requires a data path (config key 'data')")
    ds = dataio.csv_read(cfg["data"])
    seed = _as_int(cfg, "seed")
    method = cfg["method"]
    if method not in KNOWN_METHODS:
        raise DataError(f"unknown method {method!r}")
    mode = cfg["mode"]
    censored = _as_bool(cfg, "censored")
    os.makedirs(args.out_dir, exist_ok=True)
    if method == "dpls_iv":
        fit = dpls_iv_fit(
            ds, _dpls_from_config(cfg, seed), mode=mode, censored=censored
        )
        dataio.write_fit(os.path.join(args.out_dir, "fit.json"), fit, len(ds.y))
        p_hat = fit.predict_treatment(ds.z, ds.x)
        y_hat = fit.predict_outcome(ds.z, ds.x, p=ds.p)
        effect = fit.policy_effect
    else:
        coef, p_hat = _fit_baseline(method, ds, cfg, seed)
        constants = (
            estimate_tobit_constants(ds.y) if censored else identity_constants()
        )
        y_tilde = recenter_outcome(ds.y, constants)
        gfit = gmm_beta(p_hat, ds.x, y_tilde, constants, p_observed=ds.p)
        index = p_hat * gfit.beta[0]
        if ds.x.size:
            index = index + ds.x @ gfit.beta[1:]
        y_hat = np.maximum(index, 0.0) if censored else index
        effect = float(gfit.beta[0])
        doc = {
            "format": "dpls-iv-linear-fit",
            "version": 1,
            "method": method,
            "censored": censored,
            "first_stage_coef": [float(v) for v in coef],
            "outcome_beta": [float(v) for v in gfit.beta],
            "constants": {
                "psi1": constants.psi1,
                "psi2": constants.psi2,
                "sigma_star": constants.sigma_star,
                "phi_hat": constants.phi_hat,
                "c_k": constants.c_k,
            },
        }
        dataio._write_json(os.path.join(args.out_dir, "fit.json"), doc)
    dataio.write_predictions_csv(
        os.path.join(args.out_dir, "predictions.csv"),
        {"p_hat": p_hat, "y_hat": y_hat},
    )
    _echo_config(args.out_dir, cfg)
    print(f"fit: method={method} policy_effect={effect!r}")
    return 0


def _cmd_benchmark(args) -> int:
    cfg = _resolve_config("benchmark", args)
    dgp, spec = _spec_from_config(cfg)
    seed = _as_int(cfg, "seed")
    methods = tuple(m.strip() for m in cfg["methods"].split(",") if m.strip())
    exp_cfg = ExperimentConfig(
        dgp=dgp,
        spec=spec,
        methods=methods,
        dpls=_dpls_from_config(cfg, seed),
        mode=cfg["mode"],
        censored=_as_bool(cfg, "censored"),
        test_fraction=_as_float(cfg, "test_fraction"),
        replications=_as_int(cfg, "replications"),
        base_seed=seed,
        jobs=_as_int(cfg, "jobs"),
    )
    report = run_benchmark(exp_cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    dataio.write_metrics_csv(os.path.join(args.out_dir, "metrics.csv"), report)
    dataio.write_bias_cdf_csv(os.path.join(args.out_dir, "bias_cdf.csv"), report)
    dataio.write_summary(
        os.path.join(args.out_dir, "summary.txt"),
        report,
        f"{dgp} benchmark, {exp_cfg.replications} replications",
    )
    _echo_config(args.out_dir, cfg)
    n_cells = exp_cfg.replications * len(methods)
    print(
        f"benchmark: {n_cells - len(report.failures)} of {n_cells} cells "
        f"succeeded; reports in {args.out_dir}"
    )
    if len(report.failures) == n_cells:
        raise NumericalError("every method failed in every replication")
    return 0


def _cmd_predict(args) -> int:
    cfg = _resolve_config("predict", args)
    if cfg["fit"] == "":
        raise _UsageError("predict requires a fit path (config key 'fit')")
    if cfg["data"] == "":
        raise _UsageError("predict requires a data path (config key 'data')")
    doc = dataio._read_json(cfg["fit"])
    ds = dataio.csv_read(cfg["data"])
    draws = _as_int(cfg, "draws")
    level = _as_float(cfg, "level")
    if not (0.0 < level < 1.0):
        raise DataError(f"level must lie in (0, 1), got {level}")
    seed = _as_int(cfg, "seed")
    columns: dict[str, np.ndarray] = {}
    if doc.get("format") == "dpls-iv-linear-fit":
        coef = np.asarray(doc["first_stage_coef"], dtype=np.float64)
        beta = np.asarray(doc["outcome_beta"], dtype=np.float64)
        zbar = augment_instruments(ds.z, ds.x).zbar
        if zbar.shape[1] != len(coef):
            raise DataError(
                f"fit expects {len(coef)} design columns, data has {zbar.shape[1]}"
            )
        p_hat = zbar @ coef
        index = p_hat * beta[0]
        if ds.x.size:
            index = index + ds.x @ beta[1:]
        y_hat = np.maximum(index, 0.0) if doc["censored"] else index
        columns["p_hat"] = p_hat
        columns["y_hat"] = y_hat
        if draws > 0:
            raise DataError(
                "posterior intervals need a dpls_iv fit with a gmm stage"
            )
    else:
        fit, n_train = dataio.read_fit(cfg["fit"])
        p_hat = fit.predict_treatment(ds.z, ds.x)
        y_hat = fit.predict_outcome(ds.z, ds.x, p=ds.p)
        columns["p_hat"] = p_hat
        columns["y_hat"] = y_hat
        if draws > 0:
            if fit.gmm is None or fit.gmm.corrected_matrix is None:
                raise DataError(
                    "posterior intervals need a dpls_iv fit with a gmm stage"
                )
            post = sample_posterior(fit.gmm, n_train, draws, SeededRng(seed))
            design = np.column_stack([p_hat, ds.x])
            latent = post.predictive(design)
            lo = (1.0 - level) / 2.0
            columns[f"y_lo_{level:g}"] = np.quantile(latent, lo, axis=1)
            columns[f"y_hi_{level:g}"] = np.quantile(latent, 1.0 - lo, axis=1)
    os.makedirs(args.out_dir, exist_ok=True)
    dataio.write_predictions_csv(
        os.path.join(args.out_dir, "predictions.csv"), columns
    )
    _echo_config(args.out_dir, cfg)
    print(f"predict: wrote {len(ds.y)} rows to {args.out_dir}/predictions.csv")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "benchmark": _cmd_benchmark,
    "predict": _cmd_predict,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
