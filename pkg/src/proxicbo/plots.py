"""Figure rendering for benchmark outputs.

Figures are written next to the CSV tables. All content is derived from the
aggregate rows, so the figures carry no information the tables do not.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_METHOD_STYLE = {
    "proxicbo": dict(color="tab:red", marker="o"),
    "cbo": dict(color="tab:blue", marker="s"),
    "projcbo": dict(color="tab:green", marker="^"),
    "pg": dict(color="tab:gray", marker="d"),
    "apg": dict(color="tab:purple", marker="v"),
}


def _by_method(aggregates, stat):
    out = {}
    for row in aggregates:
        if row["stat_name"] != stat:
            continue
        out.setdefault(row["method"], []).append(
            (row["n_particles"], row["stat_value"]))
    for series in out.values():
        series.sort()
    return out


def _line_figure(aggregates, stat, ylabel, path, hline=None):
    series = _by_method(aggregates, stat)
    if not series:
        return None
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for method, pts in series.items():
        ns = [p[0] for p in pts]
        vals = [p[1] for p in pts]
        style = _METHOD_STYLE.get(method, {})
        ax.plot(ns, vals, label=method, **style)
    if hline is not None:
        ax.axhline(hline, color="k", linestyle="--", linewidth=1,
                   label="sqrt CRB")
    ax.set_xscale("log")
    ax.set_xlabel("particles / restarts")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_benchmark(aggregates, out_dir, kind):
    """Render the standard figures for one benchmark; returns written paths."""
    written = []
    p = _line_figure(aggregates, "success_rate", "success rate",
                     out_dir / "success_rate.png")
    if p:
        written.append(p)
    if kind in ("onebit-sparse", "onebit-image"):
        p = _line_figure(aggregates, "mean_snr_db", "mean SNR (dB)",
                         out_dir / "snr.png")
        if p:
            written.append(p)
    else:
        params = ["s", "b", "tau"] + (["v"] if kind == "doppler" else [])
        for name in params:
            bound = [row["stat_value"] for row in aggregates
                     if row["stat_name"] == f"sqrt_crb_{name}"]
            p = _line_figure(aggregates, f"rmse_{name}", f"RMSE {name}",
                             out_dir / f"rmse_{name}.png",
                             hline=bound[0] if bound else None)
            if p:
                written.append(p)
    return written


def plot_theory(result, out_dir):
    """Second-moment decay next to the guaranteed envelope."""
    import numpy as np

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.semilogy(result.times, result.moments, "o-", color="tab:red",
                label="ensemble second moment")
    envelope = result.moments[0] * np.exp(-0.5 * result.kappa * result.times)
    ax.semilogy(result.times, envelope, "k--",
                label="exp(-kappa t / 2) envelope")
    ax.set_xlabel("time")
    ax.set_ylabel("second moment")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "theory_decay.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
