"""Render report figures to PNG files with a non-interactive backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": (5.0, 3.2),
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "svg.hashsalt": "cavity-uq",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def passband(path, modes, mean_mhz, std_mhz, label=None, sigmas=3.0):
    """Mode means with +-sigmas*std bars."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.errorbar(modes, mean_mhz, yerr=sigmas * np.asarray(std_mhz), fmt="o", capsize=3, label=label)
        ax.set_xlabel("mode")
        ax.set_ylabel("frequency (MHz)")
        if label:
            ax.legend()
        _save(fig, path)


def vendor_passbands(path, rows):
    """rows: (vendor, mode, mean, std) tuples."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        vendors = list(dict.fromkeys(r[0] for r in rows))
        for k, v in enumerate(vendors):
            sel = [r for r in rows if r[0] == v]
            m = np.array([r[1] for r in sel]) + 0.15 * (k - (len(vendors) - 1) / 2)
            ax.errorbar(m, [r[2] for r in sel], yerr=[r[3] for r in sel], fmt="o", capsize=3, label=v)
        ax.set_xlabel("mode")
        ax.set_ylabel("frequency (MHz)")
        ax.legend()
        _save(fig, path)


def flatness_bars(path, labels, counts):
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.bar(labels, counts, color="0.4")
        ax.set_xlabel("field flatness")
        ax.set_ylabel("cavities")
        _save(fig, path)


def sensitivity_bars(path, names, sobol, delta_kde, delta_hist):
    """Sobol indices on top, both Borgonovo estimates below."""
    x = np.arange(len(names))
    with plt.rc_context(RC):
        fig, (top, bot) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 4.0))
        top.bar(x, sobol, color="0.4")
        top.set_ylabel("Sobol S")
        bot.bar(x - 0.2, delta_kde, width=0.4, label="KDE")
        bot.bar(x + 0.2, delta_hist, width=0.4, label="histogram")
        bot.set_ylabel("Borgonovo delta")
        bot.set_xticks(x, names, rotation=90)
        bot.legend()
        _save(fig, path)


def kcc_curve(path, shifts_mm, kcc):
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        ax.plot(shifts_mm, 100 * np.asarray(kcc), color="k")
        ax.set_xlabel("iris radius deviation (mm)")
        ax.set_ylabel("k_cc (%)")
        _save(fig, path)
