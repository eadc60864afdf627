"""Shared helpers for the experiment scripts."""

import os
import sys
from pathlib import Path

from imexhmm.cli import parse_config_text, build_config
from imexhmm.plotting import emit_plot
from imexhmm.study import run_study

ROOT = Path(__file__).resolve().parent.parent


def run_config(name: str, section: str, kind: str, **overrides):
    text = (ROOT / "configs" / f"{name}.cfg").read_text()
    config = build_config(kind, parse_config_text(text, section), overrides)
    result = run_study(config)
    out = Path(os.environ.get("IMEXHMM_OUTPUT_DIR", "results"))
    result.write_csv(out / f"{name}.csv")
    emit_plot(result, out / f"{name}.svg")
    for r in result.rows:
        print({k: r[k] for k in ("study", "scheme", "H", "tau", "micro_n", "E_total", "rate", "diverged")})
    sys.stdout.flush()
    return result
