"""``horolab`` command line: run, validate and list experiments.

Exit codes: 0 success, 2 invalid config (nothing written), 3 numerical
failure (manifest.json records the error).
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BOUNDED,
    bolton_certificate,
    bounded_jacobi_check,
    compute_V,
    detV_flow_invariance,
    kernel_vectors,
    orbit_samples,
    product_trace_check,
    rank_estimate,
    split_samples,
)
from .config import ExperimentConfig, dumps, validate
from .errors import HorolabError, ModelError, NumericalError
from .jacobi import (
    conjugate_point_scan,
    fundamental_pair,
    jacobi_residual,
    volume_growth_series,
    wronskian_drift,
)
from .models import CATALOG, PRODUCT
from .riccati import squeeze_ok, stable_riccati, unstable_riccati
from .symop import spectrum

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class Series:
    def __init__(self, header, rows, description=""):
        self.header = list(header)
        self.rows = rows
        self.description = description

    def write(self, path: Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            for row in self.rows:
                w.writerow([format(float(x), ".17g") for x in row])


# -- experiments -----------------------------------------------------------


def _riccati(cfg: ExperimentConfig):
    num = cfg.numeric
    stable = stable_riccati(cfg.model, num.tol, num.T_max, num.h)
    unstable = unstable_riccati(cfg.model, num.tol, num.T_max, num.h)
    checks = {
        "increments_psd": all(spectrum(d).min >= -1e-8 for d in stable.increments()),
        "squeeze": squeeze_ok(stable),
    }
    return {"stable": stable.to_dict(), "unstable": unstable.to_dict()}, None, checks


def _invariance(cfg: ExperimentConfig):
    num = cfg.numeric
    res = detV_flow_invariance(cfg.model, num.t_max, num.h, num.tol, num.T_max)
    report = {
        "det_deviation": res.det_deviation,
        "log_derivative_deviation": res.log_derivative_deviation,
        "det_V0": float(res.det_V[0]),
        "singular": res.singular,
    }
    rows = np.column_stack([res.t, res.det_V, res.tr_Us, res.tr_Uu])
    series = Series(["t", "det_V", "tr_Us", "tr_Uu"], rows, "t, det V(t), tr U^s(t), tr U^u(t)")
    checks = {"log_derivative_identity": res.singular or res.log_derivative_deviation <= 1e-5}
    return report, series, checks


def _rank(cfg: ExperimentConfig):
    num = cfg.numeric
    sample = compute_V(cfg.model, num.tol, num.T_max, num.h)
    rank = rank_estimate(sample)
    kernel, rest = kernel_vectors(sample)
    fields = []
    for label, vecs in (("kernel", kernel), ("complement", rest)):
        for j in range(vecs.shape[1]):
            r = bounded_jacobi_check(cfg.model, vecs[:, j], num.t_max, num.h, U_s=sample.U_s)
            fields.append({
                "subspace": label,
                "X": vecs[:, j].tolist(),
                "sup_norm": r.sup_norm,
                "classification": r.classification,
                "forward_norm": r.forward_norm,
                "backward_norm": r.backward_norm,
            })
    consistent = all((f["classification"] == BOUNDED) == (f["subspace"] == "kernel") for f in fields)
    report = {"rank": rank, "sample": sample.to_dict(), "jacobi_fields": fields}
    return report, None, {"kernel_iff_bounded": consistent}


def _product(cfg: ExperimentConfig):
    num = cfg.numeric
    f1, f2 = cfg.model.factors
    splits = cfg.samples if cfg.samples is not None else (cfg.model.c,)
    results = [product_trace_check(f1.kappa, f1.n, f2.kappa, f2.n, c, num.tol, num.T_max, num.h) for c in splits]
    rows = [(r.c, r.lhs, r.rhs, r.deviation) for r in results]
    report = {"checks": [{"c": r.c, "lhs": r.lhs, "rhs": r.rhs, "deviation": r.deviation} for r in results]}
    series = Series(["c", "lhs", "rhs", "deviation"], rows, "c, tr U^s on product, split formula, |difference|")
    return report, series, {"max_deviation_le_1e-6": max(r.deviation for r in results) <= 1e-6}


def _bolton(cfg: ExperimentConfig):
    num = cfg.numeric
    if cfg.model.kind == PRODUCT:
        samples = split_samples(cfg.model, cfg.samples or (cfg.model.c,))
    else:
        samples = orbit_samples(cfg.model, cfg.samples or (0.0,))
    report = bolton_certificate(samples, num.tol, num.T_max, num.h)
    return report.to_dict(), None, dict(report.checks)


def _entropy(cfg: ExperimentConfig):
    num = cfg.numeric
    g = volume_growth_series(cfg.model, num.t_probe, num.h)
    report = {"t_probe": num.t_probe, "rate": float(g.rate[-1]), "log_det_J": float(g.log_det[-1])}
    series = Series(["t", "log_det_J", "rate"], np.column_stack([g.t, g.log_det, g.rate]),
                    "t, log det J(t), d/dt log det J(t)")
    return report, series, {}


def _jacobi(cfg: ExperimentConfig):
    num = cfg.numeric
    _, B = fundamental_pair(cfg.model, num.t_max, num.h)
    drift = wronskian_drift(B)
    residual = float(np.max(jacobi_residual(B)))
    conj = conjugate_point_scan(cfg.model, num.t_max, num.h)
    report = {
        "t_max": num.t_max,
        "J_final": B.J[-1].tolist(),
        "Jp_final": B.Jp[-1].tolist(),
        "wronskian_drift_per_unit_time": drift,
        "max_relative_residual": residual,
        "first_conjugate_point": conj,
    }
    return report, B, {"wronskian_drift_le_1e-8": drift <= 1e-8}


EXPERIMENTS = {
    "riccati": _riccati,
    "invariance": _invariance,
    "rank": _rank,
    "product": _product,
    "bolton": _bolton,
    "entropy": _entropy,
    "jacobi": _jacobi,
}


def _json_safe(details: dict) -> dict:
    out = {}
    for k, v in details.items():
        if isinstance(v, (int, float, str, bool)) or v is None:
            out[k] = v
        elif hasattr(v, "to_dict"):
            out[k] = {kk: vv for kk, vv in v.to_dict().items() if kk != "samples"}
    return out


def run(cfg: ExperimentConfig, out_dir: str | Path | None = None, quiet: bool = True) -> tuple[int, dict]:
    """Execute one experiment, write its artifacts, and return ``(exit_code, manifest)``."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    manifest = {
        "tool": "horolab",
        "version": __version__,
        "config": cfg.to_dict(),
        "started": datetime.now(timezone.utc).isoformat(),
        "artifacts": [],
        "status": "ok",
    }
    code = EXIT_OK
    try:
        report, series, checks = EXPERIMENTS[cfg.experiment](cfg)
    except (NumericalError, ModelError) as exc:
        code = EXIT_NUMERIC
        manifest["status"] = "error"
        manifest["error"] = type(exc).__name__
        manifest["message"] = str(exc)
        manifest["details"] = _json_safe(getattr(exc, "details", {}))
        report = series = None
        checks = {}
    if report is not None:
        (out / "report.json").write_text(dumps(report), encoding="utf-8")
        manifest["artifacts"].append("report.json")
    if series is not None:
        if isinstance(series, Series):
            series.write(out / "series.csv")
            manifest["series_columns"] = series.description
        else:
            series.to_csv(out / "series.csv")
            manifest["series_columns"] = "t, J row-major, J' row-major"
        manifest["artifacts"].append("series.csv")
    manifest["checks"] = {k: bool(v) for k, v in checks.items()}
    manifest["duration_seconds"] = time.perf_counter() - started
    manifest["artifacts"].append("manifest.json")
    (out / "manifest.json").write_text(dumps(manifest), encoding="utf-8")
    if not quiet:
        _summarize(cfg, report, manifest, out)
    return code, manifest


def _summarize(cfg, report, manifest, out):
    print(f"horolab {cfg.experiment} on {cfg.model.kind} (n={cfg.model.n}) -> {out}")
    if manifest["status"] != "ok":
        print(f"  error: {manifest['error']}: {manifest['message']}")
        return
    for key, value in (report or {}).items():
        if isinstance(value, (int, float, str, bool)):
            print(f"  {key}: {value}")
    for key, ok in manifest["checks"].items():
        print(f"  [{'pass' if ok else 'FAIL'}] {key}")


def _format_values(values) -> str:
    return "[" + ", ".join(f"{v:g}" for v in values) + "]"


def print_catalog(stream=None):
    stream = stream or sys.stdout
    for entry in CATALOG.values():
        print(f"{entry.key}: {entry.description}", file=stream)
        print(f"    model: {dumps(entry.model.to_dict(), indent=0).replace(chr(10), ' ').strip()}", file=stream)
        if entry.stable is not None:
            print(
                f"    U^s = diag{_format_values(entry.stable)}, U^u = -U^s, "
                f"alpha = {entry.alpha:g}, det V = {entry.det_v:g}",
                file=stream,
            )
        elif not entry.conjugate_free:
            print(f"    first conjugate point at t = pi = {math.pi:.6f}", file=stream)
        else:
            print("    no closed form; det V not flow-invariant (tr U^u + tr U^s != 0 pointwise)", file=stream)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="horolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    p_run.add_argument("--quiet", action="store_true")
    p_val = sub.add_parser("validate", help="validate a config without running it")
    p_val.add_argument("config")
    sub.add_parser("catalog", help="list catalog models with closed-form expectations")
    args = parser.parse_args(argv)

    if args.command == "catalog":
        print_catalog()
        return EXIT_OK
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    result = validate(text)
    if isinstance(result, list):
        for err in result:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(dumps(result.to_dict()), end="")
        return EXIT_OK
    try:
        code, _ = run(result, args.out, quiet=args.quiet)
    except HorolabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return code


if __name__ == "__main__":
    sys.exit(main())
