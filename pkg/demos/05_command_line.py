"""The ``qsfilter`` command on the scenario files next to this script.

Equivalent shell commands::

    qsfilter verify
    qsfilter run --scenario demos/scenarios/spin_collapse.toml --keep 2 --plots
    qsfilter sweep --scenario demos/scenarios/spin_collapse.toml --dt-sweep 4e-3,2e-3,1e-3
    qsfilter oracle-compare --scenario demos/scenarios/oracle.json
    qsfilter run --mode counting --scenario demos/scenarios/emitter.toml
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from qsfilter.cli import main

here = Path(__file__).parent / "scenarios"
with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    main(["run", "--scenario", str(here / "driven_spin.toml"), "--ensemble", "500", "--out", str(out / "run")])
    summary = json.loads((out / "run" / "summary.json").read_text())
    print("innovation moments at T:", summary["innovation_moments"])

    main(["sweep", "--scenario", str(here / "spin_collapse.toml"), "--ensemble", "20",
          "--dt-sweep", "4e-3,2e-3,1e-3", "--out", str(out / "sweep")])
    print((out / "sweep" / "sweep.csv").read_text())

    main(["oracle-compare", "--scenario", str(here / "oracle.json"), "--out", str(out / "oracle")])
