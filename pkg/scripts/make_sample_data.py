"""Regenerate the bundled FRED-format sample files in src/quantsens/data/.

The files are synthetic stand-ins shaped like FRED's M1SL and PCEPI
downloads (monthly index levels, ``observation_date`` header, ``.`` for a
missing value).  They are not real data.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "quantsens" / "data"
N = 300


def main(seed=20240101):
    rng = np.random.default_rng(seed)
    m = np.zeros(N)
    pi = np.zeros(N)
    m[0], pi[0] = 0.005, 0.002
    for t in range(1, N):
        vol = 0.003 * (1.0 + 40.0 * max(m[t - 1], 0.0))
        m[t] = 0.002 + 0.55 * m[t - 1] + vol * rng.standard_normal()
        lag = m[t - 6] if t >= 6 else 0.004
        pi[t] = 0.0007 + 0.55 * pi[t - 1] + 0.08 * lag + 0.0016 * rng.standard_normal()
    money = 1100.0 * np.exp(np.cumsum(m))
    prices = 70.0 * np.exp(np.cumsum(pi))
    months = np.arange(np.datetime64("1998-01"), np.datetime64("1998-01") + N)

    OUT.mkdir(parents=True, exist_ok=True)
    lines = ["observation_date,M1SL"]
    for t, d in enumerate(months):
        lines.append(f"{d}-01,{'.' if t == 0 else f'{money[t]:.1f}'}")
    (OUT / "sample_m1.csv").write_text("\n".join(lines) + "\n")
    lines = ["observation_date,PCEPI"] + [f"{d}-01,{prices[t]:.3f}" for t, d in enumerate(months)]
    (OUT / "sample_pce.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
