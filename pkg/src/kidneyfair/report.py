"""CSV emission and figures for simulation, bound and tradeoff reports."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Sequence

from .bounds import BOUND_COLUMNS, BoundInputs, BoundRow, PublishedComparison
from .config import dump_params
from .model import ModelParams
from .sim import RunReport, TradeoffEstimate

STEP_SCHEMA = "kidneyfair.steps/1"
BOUND_SCHEMA = "kidneyfair.bounds/1"
TRADEOFF_SCHEMA = "kidneyfair.tradeoff/1"

STEP_COLUMNS = (
    "t", "arrivals", "matched_total", "matched_sensitized", "matched_critical",
    "unmatched_critical", "unmatched_noncritical", "expected_loss", "realized_loss",
    "perished_critical", "perished_noncritical", "became_critical", "pool_size",
    "cum_expected_loss", "cum_realized_loss",
)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _comment_params(p: ModelParams) -> list[str]:
    return [f"# param {line}" for line in dump_params(p).splitlines()]


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def steps_csv(report: RunReport, p: ModelParams) -> str:
    """Per-step CSV: schema line, run metadata block, then one row per step."""
    head = [
        f"# schema: {STEP_SCHEMA}",
        f"# policy: {report.policy}",
        f"# seed: {report.seed}",
        f"# tau: {report.tau}",
        "# columns other than cum_* are per step; cum_* accumulate through step t",
        *_comment_params(p),
    ]
    rows = []
    cum_e = 0.0
    cum_r = 0
    for s in report.steps:
        cum_e += s.expected_loss
        cum_r += s.realized_loss
        rows.append((
            s.t, s.arrivals, s.matched_total, s.matched_sensitized, s.matched_critical,
            s.unmatched_critical, s.unmatched_noncritical, s.expected_loss, s.realized_loss,
            s.perished_critical, s.perished_noncritical, s.became_critical, s.pool_size,
            cum_e, cum_r,
        ))
    return "\n".join(head) + "\n" + _csv(rows, STEP_COLUMNS)


def bounds_csv(b: BoundInputs, rows: Sequence[BoundRow], form: str,
               comparison: Sequence[PublishedComparison] | None) -> str:
    head = [
        f"# schema: {BOUND_SCHEMA}",
        "# units: coefficient of n (multiply by n for absolute values)",
        f"# n: {b.n!r}",
        f"# form: {form}",
        f"# inputs: mu_O={b.mu_O!r} mu_AB={b.mu_AB!r} mu_H={b.mu_H!r} mu_C={b.mu_C!r} "
        f"rho_C={b.rho_C!r} rho_NC={b.rho_NC!r} eta_C={b.eta_C!r}",
    ]
    data = [[getattr(r, c) for c in BOUND_COLUMNS] for r in rows]
    out = "\n".join(head) + "\n" + _csv(data, BOUND_COLUMNS)
    if comparison is not None:
        out += comparison_block(comparison)
    return out


def comparison_block(comparison: Sequence[PublishedComparison]) -> str:
    lines = ["# published comparison at tau=10 (coefficient of n)",
             "# quantity,computed,published,rel_diff,agrees_1pct"]
    for c in comparison:
        lines.append(f"# {c.quantity},{c.computed!r},{c.published!r},{c.rel_diff!r},{int(c.agrees())}")
    for c in comparison:
        if not c.agrees():
            lines.append(f"# FLAG: computed {c.quantity} {c.computed:.6f} differs from published "
                         f"{c.published:.6f} by {100 * c.rel_diff:+.1f}%")
    return "\n".join(lines) + "\n"


def tradeoff_csv(est: TradeoffEstimate, p: ModelParams) -> str:
    head = [
        f"# schema: {TRADEOFF_SCHEMA}",
        f"# arms: {est.arms[0]},{est.arms[1]}",
        f"# seed: {est.seed}",
        f"# tau: {est.tau}",
        "# losses are cumulative realized perish counts through tau",
        *_comment_params(p),
    ]
    rows = []
    for r, (a, b) in enumerate(est.losses):
        ratio = (a - b) / a if a > 0 else None
        rows.append((r, a, b, a - b, ratio, int(a == 0)))
    return "\n".join(head) + "\n" + _csv(rows, ("replication", f"loss_{est.arms[0]}", f"loss_{est.arms[1]}",
                                               "difference", "ratio", "excluded"))


def tradeoff_text(est: TradeoffEstimate, analytic: tuple[float, float, float] | None,
                  comparison: Sequence[PublishedComparison] | None = None) -> str:
    a, b = est.arms
    lines = [f"tradeoff ({a} vs {b}) at tau={est.tau}"]
    if analytic is not None:
        num, den, ratio = analytic
        lines.append(f"  analytic   numerator={num:.6f}n  denominator={den:.6f}n  ratio={ratio:.6f}")
    else:
        lines.append("  analytic   undefined (zero SENS bound)")
    lines.append(f"  empirical  replications={est.replications}  excluded={est.excluded}  "
                 f"mean_ratio={est.mean:.6f}  ratio_of_means={est.ratio_of_means:.6f}")
    if est.ci is not None:
        lines.append(f"             ratio 95% CI=[{est.ci[0]:.6f}, {est.ci[1]:.6f}]  se={est.se:.6f}")
    else:
        lines.append("             ratio CI omitted: fewer than two usable replications")
    lines.append(f"  loss       mean {a}={sum(x for x, _ in est.losses) / est.replications:.4f}  "
                 f"mean {b}={sum(y for _, y in est.losses) / est.replications:.4f}  "
                 f"difference={est.diff_mean:.4f}")
    if est.diff_ci is not None:
        lines.append(f"             difference 95% CI=[{est.diff_ci[0]:.4f}, {est.diff_ci[1]:.4f}]")
    if comparison:
        lines.append("  published comparison (tau=10):")
        for c in comparison:
            flag = "" if c.agrees() else "  <-- disagrees"
            lines.append(f"    {c.quantity:<12} computed={c.computed:.6f}  published={c.published:.6f}  "
                         f"rel_diff={c.rel_diff:+.4f}{flag}")
    return "\n".join(lines) + "\n"


# -- figures ----------------------------------------------------------------


def _pyplot():
    # imported on first use so CSV-only commands stay fast
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> Path:
    plt = _pyplot()
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_steps(report: RunReport, path: Path) -> Path:
    t = [s.t for s in report.steps]
    fig, (ax0, ax1) = _pyplot().subplots(2, 1, figsize=(6, 5), sharex=True)
    ax0.plot(t, [s.pool_size for s in report.steps], marker="o", label="pool after step")
    ax0.plot(t, [s.matched_total for s in report.steps], marker="s", label="matched")
    ax0.set_ylabel("pairs")
    ax0.legend(frameon=False)
    ax1.plot(t, [s.expected_loss for s in report.steps], marker="o", label="expected loss")
    ax1.plot(t, [s.realized_loss for s in report.steps], marker="x", ls="--", label="realized loss")
    ax1.set_xlabel("step")
    ax1.set_ylabel("pairs lost")
    ax1.legend(frameon=False)
    ax0.set_title(f"policy={report.policy} seed={report.seed}")
    return _save(fig, path)


def plot_bounds(rows: Sequence[BoundRow], path: Path) -> Path:
    t = [r.tau for r in rows]
    fig, (ax0, ax1) = _pyplot().subplots(1, 2, figsize=(9, 3.5))
    ax0.plot(t, [r.sens for r in rows], marker="o", label="SENS bound")
    ax0.plot(t, [r.time for r in rows], marker="s", label="TIME bound")
    ax0.plot(t, [r.numerator for r in rows], ls="--", label="difference")
    ax0.set_xlabel(r"$\tau$")
    ax0.set_ylabel("loss / n")
    ax0.legend(frameon=False)
    ax1.plot(t, [r.ratio if r.ratio is not None else math.nan for r in rows], marker="o")
    ax1.set_xlabel(r"$\tau$")
    ax1.set_ylabel("tradeoff ratio")
    return _save(fig, path)


def plot_tradeoff(est: TradeoffEstimate, path: Path) -> Path:
    diffs = [a - b for a, b in est.losses]
    fig, ax = _pyplot().subplots(figsize=(5, 3.5))
    ax.hist(diffs, bins=min(30, max(5, len(set(diffs)))), color="0.6", edgecolor="k")
    ax.axvline(0, color="k", lw=0.8)
    ax.axvline(est.diff_mean, color="C3", label=f"mean {est.diff_mean:.2f}")
    ax.set_xlabel(f"loss({est.arms[0]}) - loss({est.arms[1]})")
    ax.set_ylabel("replications")
    ax.legend(frameon=False)
    return _save(fig, path)
