#!/usr/bin/env python3
"""Generate the synthetic 3-day weather/load series shipped in scenarios/.

Shapes are simple analytic curves (sinusoidal daily temperature, clear-sky
irradiance bell, morning/evening load and DHW peaks) with a small seeded
day-to-day variation.  Re-running this script reproduces the CSVs byte for
byte; the files are inputs to the simulator, not code.
"""

import csv
import math
import pathlib

import numpy as np

DAYS = 3
OUT_DIR = pathlib.Path(__file__).resolve().parent.parent / "scenarios"

SEASONS = {
    #            t_mean  t_amp  sunrise sunset  irr_max
    "winter": dict(t_mean=0.0, t_amp=4.0, sunrise=8.0, sunset=17.0, irr_max=0.18),
    "spring": dict(t_mean=10.0, t_amp=6.0, sunrise=7.0, sunset=19.0, irr_max=0.60),
    "summer": dict(t_mean=19.0, t_amp=6.0, sunrise=6.0, sunset=21.0, irr_max=0.85),
}


def bump(h, center, width):
    return math.exp(-((h - center) / width) ** 2)


def base_load_shape(h):
    return 0.45 + 0.7 * bump(h, 8.0, 1.8) + 1.1 * bump(h, 19.5, 2.2)


def dhw_shape(h):
    return 0.1 + 1.1 * bump(h, 7.5, 1.2) + 0.8 * bump(h, 20.0, 1.5)


def make_season(name, p, rng):
    rows = []
    for d in range(DAYS):
        t_shift = rng.uniform(-1.0, 1.0)
        irr_factor = rng.uniform(0.85, 1.0)
        load_factor = rng.uniform(0.95, 1.05)
        for h in range(24):
            t_out = (p["t_mean"] + t_shift
                     + p["t_amp"] * math.cos(2 * math.pi * (h - 14) / 24))
            if p["sunrise"] < h < p["sunset"]:
                irr = (p["irr_max"] * irr_factor
                       * math.sin(math.pi * (h - p["sunrise"])
                                  / (p["sunset"] - p["sunrise"])))
            else:
                irr = 0.0
            rows.append((d * 24 + h,
                         round(t_out, 3),
                         round(max(0.0, irr), 4),
                         round(base_load_shape(h) * load_factor, 4),
                         round(dhw_shape(h), 4)))
    return rows


def main():
    rng = np.random.default_rng(42)
    OUT_DIR.mkdir(exist_ok=True)
    for name, p in SEASONS.items():
        rows = make_season(name, p, rng)
        path = OUT_DIR / f"series_{name}.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["hour", "t_out_c", "irradiance_kw_m2",
                        "base_load_kw", "dhw_kw"])
            w.writerows(rows)
        print(f"wrote {path} ({len(rows)} rows)")


if __name__ == "__main__":
    main()
