"""Figure renderers: each reads documented CSV schemas and writes one image.

All renderers are read-only over their inputs and deterministic: fixed figure
geometry, no timestamps in the image metadata, stable iteration order.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

__all__ = ["MissingInput", "FIGURES", "render"]

# keep PNG output free of environment-dependent metadata
_SAVE_KW = {"dpi": 150, "metadata": {"Software": ""}}


class MissingInput(FileNotFoundError):
    """A required CSV is absent or unreadable; carries the offending path."""

    def __init__(self, path):
        super().__init__(f"missing or invalid input file: {path}")
        self.path = Path(path)


def _read(path: Path, columns) -> pd.DataFrame:
    if not path.is_file():
        raise MissingInput(path)
    try:
        df = pd.read_csv(path)
    except Exception as exc:  # malformed CSV
        raise MissingInput(path) from exc
    missing = set(columns) - set(df.columns)
    if missing:
        raise MissingInput(path)
    return df


def _finish(fig, out_path: Path):
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def plot_speedup(in_dir: Path, out_dir: Path):
    """Sup-norm error versus iteration for both recursions, with the common
    plateau band and each run's stable-hit iteration marked."""
    summary = _read(in_dir / "speedup_summary.csv",
                    ["run", "seed", "sa_stable_hit", "dsa_stable_hit", "band"])
    runs = summary[summary["run"] != "ratio"]
    if runs.empty:
        raise MissingInput(in_dir / "speedup_summary.csv")

    fig, ax = plt.subplots(figsize=(7, 4.5))
    colors = {"sa": "tab:red", "dsa": "tab:blue"}
    labels = {"sa": "single-agent", "dsa": "decentralized"}
    for _, row in runs.iterrows():
        run = int(row["run"])
        for method in ("sa", "dsa"):
            trace = _read(in_dir / f"speedup_{method}_seed{run}.csv", ["k", "opt_error"])
            ax.plot(trace["k"], trace["opt_error"], color=colors[method], lw=0.8,
                    alpha=0.6, label=labels[method] if run == 0 else None)
            hit = float(row[f"{method}_stable_hit"])
            err_at_hit = trace.loc[(trace["k"] - hit).abs().idxmin(), "opt_error"]
            ax.plot([hit], [err_at_hit], marker="o", ms=5, color=colors[method],
                    mec="black", mew=0.5, zorder=5)
        ax.axhline(float(row["band"]), color="gray", lw=0.6, ls="--", alpha=0.5)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\|V^k - V^\pi\|_\infty$")
    ax.set_title("Single-agent vs decentralized iterations to the plateau band")
    ax.legend(loc="upper right")
    return [_finish(fig, out_dir / "speedup_curves.png")]


def plot_pagerank(in_dir: Path, out_dir: Path):
    """Two images: l1 error curves of the three recursions, and per-agent
    strict block error against half the closed-form diameter."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    styles = {
        "core_halo": ("tab:blue", "halo-informed parallel"),
        "single_agent": ("tab:green", "single-agent block"),
        "strict": ("tab:red", "strict blocks"),
    }
    for method, (color, label) in styles.items():
        trace = _read(in_dir / f"pagerank_{method}.csv", ["k", "opt_error"])
        # log-scale axis: clip exact zeros to the smallest positive error
        err = trace["opt_error"].clip(lower=1e-300)
        ax.plot(trace["k"], err, color=color, label=label)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(r"$\ell_1$ error")
    ax.set_title("Fixed-point error of the three block recursions")
    ax.legend()
    out = [_finish(fig, out_dir / "pagerank_error.png")]

    bias = _read(in_dir / "pagerank_bias.csv", ["agent", "sup_block_error", "half_delta"])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    x = bias["agent"].to_numpy()
    width = 0.38
    ax.bar(x - width / 2, bias["sup_block_error"], width, label="measured sup block error",
           color="tab:red")
    ax.bar(x + width / 2, bias["half_delta"], width, label=r"$\Delta_i / 2$",
           color="tab:gray")
    ax.set_xlabel("agent")
    ax.set_ylabel(r"$\ell_1$ block error")
    ax.set_title("Strict block error vs half the block-update diameter")
    ax.set_xticks(x)
    ax.legend()
    out.append(_finish(fig, out_dir / "pagerank_bias.png"))
    return out


def plot_minigrid(in_dir: Path, out_dir: Path):
    """Mean canonical return (with run spread) versus the number of agents."""
    df = _read(in_dir / "minigrid_returns.csv", ["m", "method", "run", "canonical_return"])
    fig, ax = plt.subplots(figsize=(6, 4.5))
    styles = {"core_halo": ("tab:blue", "halo-informed"), "strict": ("tab:red", "strict")}
    for method, (color, label) in styles.items():
        grp = df[df["method"] == method].groupby("m")["canonical_return"]
        if grp.ngroups == 0:
            continue
        ms = sorted(grp.groups)
        means = [grp.get_group(m).mean() for m in ms]
        stds = [grp.get_group(m).std(ddof=0) for m in ms]
        ax.errorbar(ms, means, yerr=stds, color=color, label=label, marker="o", capsize=3)
    ax.set_xlabel("number of agents m")
    ax.set_ylabel("canonical return")
    ax.set_title("Greedy-policy return versus partition count")
    ax.set_xticks(sorted(df["m"].unique()))
    ax.legend()
    return [_finish(fig, out_dir / "minigrid_returns.png")]


def plot_smartgrid(in_dir: Path, out_dir: Path):
    """Evaluation-cost learning curves averaged over runs, one line per variant."""
    df = _read(in_dir / "smartgrid_curves.csv",
               ["system", "variant", "run", "episode", "eval_cost", "eval_violations"])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    styles = {
        "centralized": ("tab:gray", "centralized"),
        "strict": ("tab:red", "strict"),
        "core_halo": ("tab:blue", "halo-informed"),
    }
    for variant, (color, label) in styles.items():
        sub = df[df["variant"] == variant]
        if sub.empty:
            continue
        mean = sub.groupby("episode")["eval_cost"].mean()
        ax.plot(mean.index, mean.to_numpy(), color=color, label=label)
    ax.set_xlabel("episode")
    ax.set_ylabel("evaluation cost")
    system = df["system"].iloc[0] if len(df) else ""
    ax.set_title(f"SARSA evaluation cost per episode ({system})")
    ax.legend()
    return [_finish(fig, out_dir / "smartgrid_curves.png")]


FIGURES = {
    "speedup": plot_speedup,
    "pagerank": plot_pagerank,
    "minigrid": plot_minigrid,
    "smartgrid": plot_smartgrid,
}


def render(experiment: str, in_dir, out_dir):
    """Render every figure for one experiment; returns the written paths."""
    if experiment not in FIGURES:
        raise KeyError(experiment)
    return FIGURES[experiment](Path(in_dir), Path(out_dir))
