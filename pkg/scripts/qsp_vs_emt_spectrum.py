"""Spectrum of the 3-bus inverter case with algebraic and with dynamic lines."""
import argparse
from pathlib import Path

import numpy as np

from gridwave import load_case
from gridwave.linearization import small_signal
from gridwave.simulation import build_simulation, initialize_simulation
from gridwave.svg import spectrum_svg


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--case", default="three_bus_inverters")
    ap.add_argument("--out", default="results/spectrum")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    system = load_case(args.case)
    series = {}
    for label, dyn in (("QSP", False), ("EMT", True)):
        inp = build_simulation(system, all_lines_dynamic=dyn)
        initialize_simulation(inp)
        _, rep = small_signal(inp)
        series[label] = rep.eigenvalues
        slow = rep.eigenvalues[np.abs(rep.eigenvalues) < 10]
        print(f"{label}: {inp.n} states, {len(rep.eigenvalues)} eigenvalues, "
              f"{len(slow)} slow, max Re {rep.eigenvalues.real.max():.4g}")
    print(f"network adds {len(series['EMT']) - len(series['QSP'])} eigenvalues")

    (out / "spectrum.svg").write_text(spectrum_svg(series, f"{args.case}: QSP vs EMT"))
    slow = {k: v[np.abs(v) < 10] for k, v in series.items()}
    (out / "slow_modes.svg").write_text(spectrum_svg(slow, "slow modes (|lambda| < 10)"))
    print(f"wrote {out}/spectrum.svg and {out}/slow_modes.svg")


if __name__ == "__main__":
    main()
