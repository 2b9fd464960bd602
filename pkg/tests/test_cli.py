import json
import math
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horolab.cli import main, run
from horolab.config import EXPERIMENTS, ConfigError, dumps, load_config, serialize, validate

H3 = {"kind": "Constant", "kappa": -1.0, "n": 3}
H2XR = {"kind": "Product", "n": 3, "c": 0.6,
        "factors": [{"kind": "Constant", "kappa": -1.0, "n": 2}, {"kind": "Constant", "kappa": 0.0, "n": 1}]}
CH2 = {"kind": "RankOneSymmetric", "n": 4, "eigen_pairs": [[-4.0, 1], [-1.0, 2]]}
PERIODIC = {"kind": "PeriodicCustom", "n": 2, "period": 1.0,
            "coefficients": [{"a0": -1.0, "cos": [-0.3], "sin": []}]}

RUNS = {
    "riccati": ({"experiment": "riccati", "model": H3}, {"stable", "unstable"}),
    "invariance": ({"experiment": "invariance", "model": CH2, "numeric": {"t_max": 5}}, {"det_deviation"}),
    "rank": ({"experiment": "rank", "model": H2XR, "numeric": {"T_max": 128}}, {"rank", "jacobi_fields"}),
    "product": ({"experiment": "product", "model": H2XR, "samples": [0.6, 1.0], "numeric": {"T_max": 256}},
                {"checks"}),
    "bolton": ({"experiment": "bolton", "model": H3}, {"verdict", "alpha"}),
    "entropy": ({"experiment": "entropy", "model": H3}, {"rate"}),
    "jacobi": ({"experiment": "jacobi", "model": PERIODIC, "numeric": {"t_max": 5}}, {"J_final"}),
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_json(path):
    return json.loads(path.read_text())


# -- validation ------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = validate(json.dumps({"experiment": "bolton", "model": H3}))
    assert cfg.numeric.h == 1e-3 and cfg.numeric.tol == 1e-9
    assert cfg.numeric.T_max == 40 and cfg.numeric.t_max == 10 and cfg.numeric.t_probe == 30
    assert cfg.samples is None and cfg.output_dir


def test_unknown_experiment_single_error():
    errors = validate(json.dumps({"experiment": "foo", "model": H3}))
    assert len(errors) == 1
    assert "'foo'" in errors[0]
    assert all(tag in errors[0] for tag in EXPERIMENTS)


def test_split_out_of_range():
    errors = validate(json.dumps({"experiment": "product", "model": dict(H2XR, c=1.5)}))
    assert errors == ["split c must lie in [0,1]"]


def test_every_problem_is_reported():
    bad = {"experiment": "foo", "model": dict(H2XR, c=-0.1), "numeric": {"h": -1e-3, "T_max": "x"}, "extra": 1}
    errors = validate(json.dumps(bad))
    assert len(errors) == 5


def test_invalid_json_and_load_config():
    assert validate("{")[0].startswith("invalid JSON")
    with pytest.raises(ConfigError) as info:
        load_config(json.dumps({"experiment": "bolton"}))
    assert info.value.errors == ["model is required"]


def test_rank_one_multiplicities_checked():
    errors = validate(json.dumps({"experiment": "bolton", "model": dict(CH2, eigen_pairs=[[-4.0, 1]])}))
    assert errors == ["model.eigen_pairs multiplicities must sum to n-1"]


models = st.one_of(
    st.builds(lambda k, n: {"kind": "Constant", "kappa": k, "n": n}, st.floats(-4, 4), st.integers(2, 6)),
    st.builds(lambda c: dict(H2XR, c=c), st.floats(0, 1)),
    st.just(CH2),
    st.builds(lambda a, b: dict(PERIODIC, coefficients=[{"a0": a, "cos": [b], "sin": [0.1]}]),
              st.floats(-3, 0), st.floats(-1, 1)),
)
positive = st.floats(1e-4, 100, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(EXPERIMENTS).filter(lambda e: e != "product"),
    models,
    st.fixed_dictionaries({}, optional={"h": positive, "tol": positive, "t_max": positive, "t_probe": positive}),
    st.one_of(st.none(), st.lists(st.floats(0, 1), min_size=1, max_size=4)),
)
def test_round_trip(experiment, model, numeric, samples):
    raw = {"experiment": experiment, "model": model, "numeric": numeric, "output_dir": "out"}
    if samples is not None:
        raw["samples"] = samples
    cfg = validate(json.dumps(raw))
    assert not isinstance(cfg, list), cfg
    assert validate(serialize(cfg)) == cfg


def test_dumps_writes_17_digits():
    text = dumps({"x": 0.1, "y": float("nan"), "z": 2.0, "w": [1, 1 / 3]})
    assert '"x": 0.10000000000000001' in text
    assert '"y": null' in text and '"z": 2.0' in text
    assert "0.33333333333333331" in text


# -- runs ------------------------------------------------------------------


@pytest.mark.parametrize("tag", sorted(RUNS))
def test_end_to_end(tmp_path, tag):
    raw, keys = RUNS[tag]
    out = tmp_path / "out"
    code = main(["run", write(tmp_path, raw), "--out", str(out), "--quiet"])
    assert code == 0
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "ok"
    assert manifest["config"]["experiment"] == tag
    for name in manifest["artifacts"]:
        assert (out / name).exists()
    assert keys <= set(read_json(out / "report.json"))
    assert all(manifest["checks"].values()), manifest["checks"]
    if "series.csv" in manifest["artifacts"]:
        header = (out / "series.csv").read_text().splitlines()[0]
        assert header.startswith("t,") or header.startswith("c,")
        assert manifest["series_columns"]


def test_bolton_report_values(tmp_path):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, RUNS["bolton"][0]), "--out", str(out), "--quiet"]) == 0
    report = read_json(out / "report.json")
    assert report["verdict"] == "Anosov"
    assert report["alpha"] == pytest.approx(2.0, abs=1e-8)


def test_report_is_deterministic(tmp_path):
    raw = {"experiment": "bolton", "model": CH2, "samples": [0.0, 1.0]}
    cfg = validate(json.dumps(raw))
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_numerical_failure_exit_3(tmp_path):
    raw = {"experiment": "bolton", "model": H2XR, "samples": [0.2, 0.6, 1.0], "numeric": {"T_max": 256}}
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, raw), "--out", str(out), "--quiet"]) == 3
    manifest = read_json(out / "manifest.json")
    assert manifest["error"] == "HarmonicityError"
    assert manifest["details"]["alpha_spread"] == pytest.approx(0.8, abs=1e-6)
    assert manifest["artifacts"] == ["manifest.json"]


def test_conjugate_point_exit_3(tmp_path):
    raw = {"experiment": "riccati", "model": {"kind": "Constant", "kappa": 1.0, "n": 2}}
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, raw), "--out", str(out), "--quiet"]) == 3
    assert read_json(out / "manifest.json")["error"] == "ConjugatePointError"


def test_invalid_config_exit_2_no_artifacts(tmp_path, capsys):
    raw = {"experiment": "bolton", "model": H3, "numeric": {"h": -1e-3}}
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, raw), "--out", str(out)]) == 2
    assert not out.exists()
    assert "numeric.h must be a positive number" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert main(["validate", str(tmp_path / "nope.json")]) == 2


def test_validate_prints_normalized_config(tmp_path, capsys):
    assert main(["validate", write(tmp_path, {"experiment": "entropy", "model": H3})]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["numeric"]["t_probe"] == 30.0


def test_output_dir_from_config(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    raw = {"experiment": "entropy", "model": H3, "numeric": {"t_probe": 5}, "output_dir": "results"}
    assert main(["run", write(tmp_path, raw), "--quiet"]) == 0
    assert (tmp_path / "results" / "report.json").exists()


def test_summary_printed(tmp_path, capsys):
    main(["run", write(tmp_path, RUNS["bolton"][0]), "--out", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert "verdict: Anosov" in out and "[pass]" in out


def test_catalog(capsys):
    assert main(["catalog"]) == 0
    out = capsys.readouterr().out
    for key in ("H2", "H3", "CH2", "flat3", "sphere2", "H2xR", "H2xH2", "periodic"):
        assert f"{key}:" in out
    assert "det V = 16" in out and f"{math.pi:.6f}" in out
    assert "-0" not in out.replace("-0.", "")


def test_module_entry_point(tmp_path):
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "horolab.cli", "run", write(tmp_path, RUNS["entropy"][0]), "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert read_json(out / "report.json")["rate"] == pytest.approx(2.0, abs=1e-3)
