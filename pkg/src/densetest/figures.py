"""Figure rendering for the report path: one PNG next to each output table."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402


def _fit_line(ax, x, y, slope):
    if slope is None:
        return
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    anchor = np.exp(np.log(y).mean() - slope * np.log(x).mean())
    ax.plot(x, anchor * x**slope, "--", color="gray", label=f"slope {slope:.2f}")


def render_figure(scenario: str, rows, summary: dict, out_path: str | Path) -> Path | None:
    """Render the scenario's standard figure next to its table."""
    out = Path(out_path).with_suffix(".png")
    fig, ax = plt.subplots(figsize=(6.0, 4.0))

    if scenario in ("rate-plugin", "noiseless-dense"):
        key = "mean_abs_error" if scenario == "rate-plugin" else "median_abs_error"
        n_grid = summary["n_grid"]
        ax.loglog(n_grid, summary[key], "o-", label=key.replace("_", " "))
        _fit_line(ax, n_grid, summary[key], summary.get("slope"))
        ax.set_xlabel("n")
        ax.set_ylabel("|estimate - truth|")
        ax.legend()
    elif scenario == "size-power":
        ax.plot(summary["offsets"], summary["rejection_rate"], "o-", label="rejection rate")
        ax.errorbar(
            summary["offsets"], summary["rejection_rate"],
            yerr=[2 * s for s in summary["mc_se"]], fmt="none", ecolor="gray",
        )
        ax.axhline(summary["alpha"], color="red", ls=":", label="alpha")
        ax.axhline(1 - summary["alpha"], color="green", ls=":", label="1 - alpha")
        ax.set_xlabel("offset (multiples of c_n)")
        ax.set_ylabel("rejection rate")
        ax.set_ylim(-0.05, 1.05)
        ax.legend()
    elif scenario == "adaptivity":
        pairs = summary["pairs"]
        labels = [f"{t['s_budget']}/{t['s_true']}" for t in pairs]
        ax.bar(labels, [t["length_ratio"] for t in pairs], label="interval length ratio")
        ax.plot(labels, [t["budget_to_true"] for t in pairs], "ro-", label="s budget / s true")
        ax.set_xlabel("s budget / s true")
        ax.set_ylabel("ratio")
        ax.legend()
    elif scenario == "scaling-equivariance":
        dgrid = summary["D_grid"]
        devs = [max(summary["max_abs_deviation"][str(d)], 1e-18) for d in dgrid]
        ax.semilogy(dgrid, devs, "o-", label="max |scaled mismatch|")
        ax.axhline(1e-9, color="red", ls=":", label="1e-9 budget")
        ax.set_xscale("log")
        ax.set_xlabel("response scale D")
        ax.set_ylabel("deviation")
        ax.legend()
    elif scenario == "lowerbound-verify":
        names = list(summary["checks"])
        residuals = [max(summary["checks"][k]["worst_residual"], 1e-18) for k in names]
        colors = ["tab:green" if summary["checks"][k]["passed"] else "tab:red" for k in names]
        ax.barh(names, residuals, color=colors, log=True)
        ax.set_xlabel("worst residual")
        fig.subplots_adjust(left=0.4)
    else:
        plt.close(fig)
        return None

    ax.set_title(scenario)
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
