"""Regenerate tests/golden/benchmark_report.json from the shipped benchmark config."""

import json
from importlib import resources
from pathlib import Path

from pmuwadc.pipeline import ExperimentConfig, run_pipeline

OUT = Path(__file__).resolve().parent.parent / "tests" / "golden" / "benchmark_report.json"


def main():
    cfg = ExperimentConfig.load(resources.files("pmuwadc") / "data" / "benchmark_config.json")
    report = run_pipeline(cfg, write=False)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(report.to_dict(timing=False), indent=1) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
