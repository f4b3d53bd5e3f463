"""Drive the agf CLI end to end and validate every emitted report with jsonschema.

usage: validate_reports.py <agf-binary> <schema.json>
"""

import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

RUNS = [
    # (command, config, expected exit status)
    ("train", {"d": 8, "heads": 2, "layers": 1, "K": 3, "epochs": 2, "n_train": 32, "n_test": 16,
               "seq_len": 16, "batch_size": 8}, 0),
    ("train", {"d": 8, "heads": 2, "layers": 1, "epochs": 1, "n_train": 16, "n_test": 8, "seq_len": 16,
               "sweep_K": [3, 4]}, 0),
    ("train", {"epochs": 1, "n_train": 16, "n_test": 8, "seq_len": 16, "d": 8, "heads": 2,
               "target_accuracy": 1.5}, 1),
    ("train", {"colour": "blue"}, 2),
    ("bench", {"n_list": [16, 32, 64, 128], "d": 8, "repeats": 3, "warmups": 1,
               "agf_slope_range": [-10, 10], "vanilla_slope_range": [-10, 10]}, 0),
    ("bench", {"n_list": [16, 32]}, 2),
    ("spectral", {"mode": "theorem1"}, 0),
    ("spectral", {"mode": "theorem2", "filters": 100}, 0),
    ("spectral", {"mode": "response", "n": 32}, 0),
    ("spectral", {"mode": "oversmoothing", "n_train": 16, "n_test": 8, "seq_len": 16, "epochs": 1, "d": 8,
                  "seeds": [0]}, None),
    ("spectral", {"mode": "fourier"}, 2),
    ("gradcheck", {}, 0),
    ("gradcheck", {"corrupt_gradient": True, "variants": ["agf"]}, 1),
]


def main() -> int:
    binary, schema_path = sys.argv[1], sys.argv[2]
    schema = json.loads(pathlib.Path(schema_path).read_text())
    jsonschema.Draft202012Validator.check_schema(schema)
    validator = jsonschema.Draft202012Validator(schema)

    failures = 0
    with tempfile.TemporaryDirectory() as tmp:
        for i, (command, config, expected) in enumerate(RUNS):
            run_dir = pathlib.Path(tmp) / f"run{i}"
            run_dir.mkdir()
            cfg = run_dir / "config.json"
            cfg.write_text(json.dumps(config))
            proc = subprocess.run([binary, command, "--config", str(cfg), "--out", str(run_dir / "out")],
                                  capture_output=True, text=True)
            label = f"{command} {json.dumps(config)}"
            if expected is not None and proc.returncode != expected:
                print(f"FAIL {label}: exit {proc.returncode}, expected {expected}\n{proc.stderr}")
                failures += 1
                continue
            reports = sorted((run_dir / "out").glob("report*.json")) if (run_dir / "out").exists() else []
            if proc.returncode != 2 and not reports:
                print(f"FAIL {label}: no report written")
                failures += 1
            for report in reports:
                errors = list(validator.iter_errors(json.loads(report.read_text())))
                for e in errors:
                    print(f"FAIL {report.name} ({label}): {e.json_path}: {e.message}")
                failures += len(errors)
                for curve in json.loads(report.read_text())["curves"]:
                    if not (report.parent / curve).exists():
                        print(f"FAIL {report.name}: listed curve {curve} missing")
                        failures += 1
            print(f"ok   {label}: exit {proc.returncode}, {len(reports)} report(s)")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
