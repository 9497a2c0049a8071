"""A small Monte Carlo study comparing the two estimators.

Runs the bundled quick configuration with fewer replications and prints the
report. The full studies are run from the command line, for example::

    python3 -m elsem simulate --config configs/table2.json --out results/

Run with ``python3 demos/simulation_study.py``.
"""
from dataclasses import replace
from pathlib import Path

from elsem.simulation import load_config, render_report, run_study

config = Path(__file__).resolve().parents[1] / "configs" / "quick.json"
reports = [run_study(replace(cfg, reps=30)) for cfg in load_config(config)]
print(render_report(reports, "markdown"))
for r in reports:
    print(f"{r.scenario}: {r.reps} replications, {r.skipped} skipped; "
          f"r1(lambda1) = {r.r1('lambda1'):.3f}")
