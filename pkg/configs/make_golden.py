"""Regenerate the golden outputs in configs/golden/ from the example configs.

Run from the repository root after an intentional model change:
``python3 configs/make_golden.py``.
"""

import pathlib

from starcool.cli import main

HERE = pathlib.Path(__file__).parent
RUNS = [
    ("simulate", "cooling_curve", []),
    ("steady-state", "cooling_curve", []),
    ("sweep", "n_sweep", []),
    ("sweep", "m_sweep", []),
    ("sweep", "tau_sweep", []),
    ("fit-eta", "fit_roundtrip", ["--data", str(HERE / "data" / "roundtrip_trace.csv")]),
    ("coherence", "coherence", []),
]


def golden_name(command: str, config: str) -> str:
    return f"{config}.{command}.csv"


if __name__ == "__main__":
    for command, config, extra in RUNS:
        out = HERE / "golden" / golden_name(command, config)
        code = main([command, str(HERE / f"{config}.cfg"), "-o", str(out), "-q", *extra])
        print(f"{code}  {out.relative_to(HERE.parent)}")
