"""Experiment configuration: parsing, validation and JSON output."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .errors import ConfigError, ModelError
from .models import CONSTANT, KINDS, PERIODIC, PRODUCT, RANK_ONE, CurvatureModel, from_dict

EXPERIMENTS = ("riccati", "invariance", "rank", "product", "bolton", "entropy", "jacobi")
NUMERIC_DEFAULTS = {"h": 1e-3, "tol": 1e-9, "T_max": 40.0, "t_max": 10.0, "t_probe": 30.0}
DEFAULT_OUTPUT = "horolab_out"


@dataclass(frozen=True)
class Numeric:
    h: float = 1e-3
    tol: float = 1e-9
    T_max: float = 40.0
    t_max: float = 10.0
    t_probe: float = 30.0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model: CurvatureModel
    numeric: Numeric = field(default_factory=Numeric)
    samples: tuple[float, ...] | None = None
    output_dir: str = DEFAULT_OUTPUT

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "model": self.model.to_dict(),
            "numeric": {k: getattr(self.numeric, k) for k in NUMERIC_DEFAULTS},
            "samples": None if self.samples is None else list(self.samples),
            "output_dir": self.output_dir,
        }


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _model_errors(spec, where="model") -> list[str]:
    if not isinstance(spec, dict):
        return [f"{where} must be an object"]
    kind = spec.get("kind")
    if kind not in KINDS:
        return [f"{where}.kind {kind!r} is not one of {', '.join(KINDS)}"]
    errors = []
    if "orientation" in spec and spec["orientation"] not in (1, -1):
        errors.append(f"{where}.orientation must be +1 or -1")
    if "offset" in spec and not _is_number(spec["offset"]):
        errors.append(f"{where}.offset must be a finite number")
    if kind == CONSTANT:
        if not _is_number(spec.get("kappa")):
            errors.append(f"{where}.kappa must be a finite number")
        if not (_is_int(spec.get("n")) and spec["n"] >= 2):
            errors.append(f"{where}.n must be an integer >= 2")
    elif kind == RANK_ONE:
        pairs = spec.get("eigen_pairs")
        ok = isinstance(pairs, list) and pairs and all(
            isinstance(p, list) and len(p) == 2 and _is_number(p[0]) and _is_int(p[1]) and p[1] >= 1
            for p in pairs
        )
        if not ok:
            errors.append(f"{where}.eigen_pairs must be a non-empty list of [eigenvalue, multiplicity]")
        elif "n" in spec and spec["n"] != 1 + sum(p[1] for p in pairs):
            errors.append(f"{where}.eigen_pairs multiplicities must sum to n-1")
    elif kind == PRODUCT:
        factors = spec.get("factors")
        if not (isinstance(factors, list) and len(factors) == 2):
            errors.append(f"{where}.factors must list exactly two factors")
        else:
            for i, f in enumerate(factors):
                fw = f"{where}.factors[{i}]"
                if not isinstance(f, dict):
                    errors.append(f"{fw} must be an object")
                    continue
                if f.get("kind", CONSTANT) != CONSTANT:
                    errors.append(f"{fw} must be a Constant model")
                if not _is_number(f.get("kappa")):
                    errors.append(f"{fw}.kappa must be a finite number")
                if not (_is_int(f.get("n")) and f["n"] >= 1):
                    errors.append(f"{fw}.n must be an integer >= 1")
        c = spec.get("c")
        if not _is_number(c):
            errors.append(f"{where}.c must be a finite number")
        elif not 0.0 <= c <= 1.0:
            errors.append("split c must lie in [0,1]")
    elif kind == PERIODIC:
        if not (_is_number(spec.get("period")) and spec["period"] > 0):
            errors.append(f"{where}.period must be positive")
        coeffs = spec.get("coefficients")
        if not (isinstance(coeffs, list) and coeffs):
            errors.append(f"{where}.coefficients must be a non-empty list")
        else:
            for i, s in enumerate(coeffs):
                ok = isinstance(s, dict) and _is_number(s.get("a0", 0.0)) and all(
                    isinstance(s.get(k, []), list) and all(_is_number(x) for x in s.get(k, []))
                    for k in ("cos", "sin")
                )
                if not ok:
                    errors.append(f"{where}.coefficients[{i}] needs numeric a0, cos, sin")
            if "n" in spec and spec["n"] != len(coeffs) + 1:
                errors.append(f"{where}.n must equal the number of coefficient series plus one")
    return errors


def validate(text: str) -> ExperimentConfig | list[str]:
    """Parse and validate a JSON config, returning the config or every problem found."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        return [f"invalid JSON: {exc}"]
    if not isinstance(raw, dict):
        return ["config must be a JSON object"]
    errors = []
    known = {"experiment", "model", "numeric", "samples", "output_dir"}
    for key in sorted(set(raw) - known):
        errors.append(f"unknown top-level field {key!r}")
    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        errors.append(f"unknown experiment {experiment!r}; allowed: {', '.join(EXPERIMENTS)}")
    if "model" not in raw:
        errors.append("model is required")
    else:
        errors += _model_errors(raw["model"])
    numeric = dict(NUMERIC_DEFAULTS)
    given = raw.get("numeric", {})
    if not isinstance(given, dict):
        errors.append("numeric must be an object")
        given = {}
    for key, value in given.items():
        if key not in NUMERIC_DEFAULTS:
            errors.append(f"unknown numeric field {key!r}")
        elif not (_is_number(value) and value > 0):
            errors.append(f"numeric.{key} must be a positive number")
        else:
            numeric[key] = float(value)
    if numeric["T_max"] < 1:
        errors.append("numeric.T_max must be at least 1")
    samples = raw.get("samples")
    if samples is not None:
        if not (isinstance(samples, list) and samples and all(_is_number(s) for s in samples)):
            errors.append("samples must be a non-empty list of numbers")
            samples = None
        elif isinstance(raw.get("model"), dict) and raw["model"].get("kind") == PRODUCT:
            if any(not 0.0 <= s <= 1.0 for s in samples):
                errors.append("split c must lie in [0,1]")
    if experiment == "product" and isinstance(raw.get("model"), dict) and raw["model"].get("kind") != PRODUCT:
        errors.append("the product experiment needs a Product model")
    output_dir = raw.get("output_dir", DEFAULT_OUTPUT)
    if not isinstance(output_dir, str) or not output_dir:
        errors.append("output_dir must be a non-empty string")
    if errors:
        return errors
    try:
        model = from_dict(raw["model"])
    except ModelError as exc:
        return [str(exc)]
    return ExperimentConfig(
        experiment=experiment,
        model=model,
        numeric=Numeric(**numeric),
        samples=None if samples is None else tuple(float(s) for s in samples),
        output_dir=output_dir,
    )


def load_config(text: str) -> ExperimentConfig:
    result = validate(text)
    if isinstance(result, list):
        raise ConfigError(result)
    return result


def serialize(config: ExperimentConfig) -> str:
    return dumps(config.to_dict())


def _encode(obj, indent, level) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        text = format(obj, ".17g")
        if "e" not in text and "." not in text and "n" not in text:
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return "[" + ", ".join(_encode(x, indent, level + 1) for x in obj) + "]"
        items = [pad + _encode(x, indent, level + 1) for x in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "item"):
        return _encode(obj.item(), indent, level)
    if hasattr(obj, "tolist"):
        return _encode(obj.tolist(), indent, level)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"
