"""Post-estimation: predicted probabilities, individual-level coefficients,
log-normal moment summaries, and plotting.

Individual-level coefficients are the conditional means of the random
coefficients given a person's observed choice sequence: the simulated draws
are averaged with weights proportional to the sequence probability each
draw implies.  Log-normal location/scale estimates are mapped back to the
coefficient scale (median, mean, sd) with delta-method standard errors.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .dataset import ChoiceDataset
from .draws import build_drawset
from .errors import AttrNotLognormal, EmptyInput, SpecMismatch
from .estimation import FitResult
from .regret import ModelDesign


@dataclass(frozen=True)
class IndividualBetaTable:
    """One row per individual: conditional-mean random coefficients."""

    attrs: tuple[str, ...]
    ids: np.ndarray       # (N,) individual IDs, ascending
    values: np.ndarray    # (N, K), columns in declared random-attr order


@dataclass(frozen=True)
class LognormalSummary:
    """Coefficient-scale moments of one log-normal coefficient."""

    attr: str
    sign: int
    median: float
    median_se: float
    mean: float
    mean_se: float
    sd: float
    sd_se: float


def _bind_design(ds: ChoiceDataset, fit: FitResult) -> ModelDesign:
    try:
        design = ModelDesign(ds, fit.spec)
    except SpecMismatch as err:
        raise SpecMismatch(f"fit does not match this dataset: {err}") from None
    if fit.spec.use_asc and ds.alternative_labels != fit.alternative_labels:
        raise SpecMismatch(
            "alternative labels differ between the fit and this dataset"
        )
    if design.n_params != fit.n_parameters:
        raise SpecMismatch(
            f"fit has {fit.n_parameters} parameters but the dataset implies "
            f"{design.n_params}"
        )
    return design


def _drawset_for(design: ModelDesign, fit: FitResult, nrep, burn):
    nrep = fit.nrep if nrep is None else nrep
    burn = fit.burn if burn is None else burn
    if design.n_random == 0:
        return None, 0, 0
    if nrep < 1:
        raise ValueError("nrep must be >= 1 for a mixed fit")
    drawset = build_drawset(design.ds.n_individuals, design.n_random, nrep, burn)
    return drawset, nrep, burn


def predict_probabilities(
    ds: ChoiceDataset, fit: FitResult,
    nrep: int | None = None, burn: int | None = None,
) -> np.ndarray:
    """Simulated choice probability for every row of the dataset.

    Rows follow dataset order (individuals ascending, situations ascending,
    alternatives in file order).  Mixed fits average the per-draw
    probabilities over the Halton draws (defaults: the fit's own nrep/burn);
    classical fits use the closed form.
    """
    design = _bind_design(ds, fit)
    drawset, _, _ = _drawset_for(design, fit, nrep, burn)
    theta = fit.theta_hat

    out = np.empty(ds.n_rows)
    cursor = 0
    for pos, block in enumerate(ds.individuals):
        z = drawset.for_individual(pos) if drawset is not None else design.zero_draws()
        _, probs = design.individual_draw_info(pos, theta, z)  # (R, S, J)
        mean_probs = probs.mean(axis=0)
        for s, situation in enumerate(block.situations):
            j_here = situation.n_alternatives
            out[cursor:cursor + j_here] = mean_probs[s, :j_here]
            cursor += j_here
    return out


def predict_rows(ds, fit, nrep=None, burn=None):
    """(individual, situation, alternative, probability) per dataset row."""
    probs = predict_probabilities(ds, fit, nrep, burn)
    keys = [
        (block.individual_id, situation.situation_id, label)
        for block in ds.individuals
        for situation in block.situations
        for label, _, _ in situation.alternatives
    ]
    return list(zip(keys, probs))


def individual_betas(
    ds: ChoiceDataset, fit: FitResult,
    nrep: int | None = None, burn: int | None = None,
) -> IndividualBetaTable:
    """Conditional means of the random coefficients, one row per individual.

    Draw r is weighted by the probability of the individual's observed
    sequence of choices under that draw; weights are computed in log space
    and normalized.  Log-normal coefficients are averaged on the coefficient
    scale, not the log scale.
    """
    if fit.spec.n_random < 1:
        raise SpecMismatch("fit has no random coefficients")
    design = _bind_design(ds, fit)
    drawset, _, _ = _drawset_for(design, fit, nrep, burn)
    theta = fit.theta_hat

    ids = np.array([block.individual_id for block in ds.individuals])
    values = np.empty((ds.n_individuals, design.n_random))
    for pos in range(ds.n_individuals):
        z = drawset.for_individual(pos)
        ln_seq, _ = design.individual_draw_info(pos, theta, z)
        weights = np.exp(ln_seq - ln_seq.max())
        weights /= weights.sum()
        coef_draws = design.random_coefficient_draws(theta, z)  # (R, K)
        values[pos] = weights @ coef_draws
    return IndividualBetaTable(
        attrs=fit.spec.random_attrs, ids=ids, values=values
    )


def posterior_weights(
    ds: ChoiceDataset, fit: FitResult, position: int,
    nrep: int | None = None, burn: int | None = None,
) -> np.ndarray:
    """The draw weights behind :func:`individual_betas` for one individual."""
    design = _bind_design(ds, fit)
    drawset, _, _ = _drawset_for(design, fit, nrep, burn)
    ln_seq, _ = design.individual_draw_info(
        position, fit.theta_hat, drawset.for_individual(position)
    )
    weights = np.exp(ln_seq - ln_seq.max())
    return weights / weights.sum()


def lognormal_summary(fit: FitResult, attr: str, sign: int = 1) -> LognormalSummary:
    """Median/mean/sd of a log-normal coefficient with delta-method SEs.

    With location b and scale s (the signed estimate; everything depends on
    s only through s^2): median = exp(b), mean = exp(b + s^2/2),
    sd = mean * sqrt(exp(s^2) - 1).  ``sign`` of -1 flips median and mean
    for attributes that were negated before estimation; the sd keeps its
    sign-free value.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    spec = fit.spec
    if attr not in spec.random_attrs:
        raise AttrNotLognormal(attr)
    k = spec.random_attrs.index(attr)
    if not spec.is_lognormal(k):
        raise AttrNotLognormal(attr)

    f, kk = spec.n_fixed, spec.n_random
    idx_b = f + k
    idx_s = f + kk + k
    b = fit.theta[idx_b]
    s = fit.theta[idx_s]
    sub_cov = fit.covariance[np.ix_([idx_b, idx_s], [idx_b, idx_s])]

    median = math.exp(b)
    s2 = s * s
    mean = math.exp(b + 0.5 * s2)
    spread = math.sqrt(math.expm1(s2))
    sd = mean * spread

    jac_median = np.array([median, 0.0])
    jac_mean = np.array([mean, mean * s])
    if s != 0.0:
        d_sd_ds = sd * s + mean * s * math.exp(s2) / spread
    else:
        d_sd_ds = mean  # limit of the expression as s -> 0
    jac_sd = np.array([sd, d_sd_ds])

    def delta_se(jac):
        return float(math.sqrt(max(jac @ sub_cov @ jac, 0.0)))

    return LognormalSummary(
        attr=attr,
        sign=sign,
        median=sign * median,
        median_se=delta_se(jac_median),
        mean=sign * mean,
        mean_se=delta_se(jac_mean),
        sd=sd,
        sd_se=delta_se(jac_sd),
    )


def write_beta_file(table: IndividualBetaTable, path, replace: bool = False) -> None:
    """Write the individual-level coefficients as CSV (id, attr, ...)."""
    if os.path.exists(path) and not replace:
        raise FileExistsError(f"{path} exists; pass replace=True to overwrite")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["id", *table.attrs])
        for i, ind_id in enumerate(table.ids):
            writer.writerow([int(ind_id), *(repr(float(v)) for v in table.values[i])])


def read_beta_file(path) -> IndividualBetaTable:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [(int(r[0]), [float(v) for v in r[1:]]) for r in reader]
    return IndividualBetaTable(
        attrs=tuple(header[1:]),
        ids=np.array([r[0] for r in rows]),
        values=np.array([r[1] for r in rows], dtype=float),
    )


def histogram_svg(values, title: str, path) -> None:
    """Write a standalone SVG frequency histogram.

    Bin count is ceil(sqrt(n)) clamped to [5, 50].  Each bar carries a
    ``data-count`` attribute so the rendering stays machine-checkable.
    """
    data = np.asarray(values, dtype=float).ravel()
    if data.size == 0:
        raise EmptyInput("cannot plot an empty vector")
    if not np.all(np.isfinite(data)):
        raise ValueError("histogram values must be finite")

    n_bins = min(50, max(5, math.ceil(math.sqrt(data.size))))
    lo, hi = float(data.min()), float(data.max())
    if lo == hi:
        lo -= 0.5
        hi += 0.5
    counts, edges = np.histogram(data, bins=n_bins, range=(lo, hi))

    width, height = 640, 420
    left, right, top, bottom = 70, 20, 40, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    peak = max(int(counts.max()), 1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f"<title>{_esc(title)}</title>",
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{_esc(title)}</text>',
    ]
    bar_w = plot_w / n_bins
    for i, count in enumerate(counts):
        bar_h = plot_h * (int(count) / peak)
        x = left + i * bar_w
        y = top + plot_h - bar_h
        parts.append(
            f'<rect class="bin" data-count="{int(count)}" x="{x:.2f}" '
            f'y="{y:.2f}" width="{bar_w:.2f}" height="{bar_h:.2f}" '
            'fill="#4878a8" stroke="white" stroke-width="0.5"/>'
        )
    # axes
    parts.append(
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
        f'y2="{top + plot_h}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
        'stroke="black"/>'
    )
    for frac in (0.0, 0.5, 1.0):
        x_val = lo + frac * (hi - lo)
        x_pos = left + frac * plot_w
        parts.append(
            f'<text x="{x_pos:.1f}" y="{top + plot_h + 18}" '
            f'text-anchor="middle" font-family="sans-serif" font-size="11">'
            f"{x_val:.4g}</text>"
        )
        y_val = frac * peak
        y_pos = top + plot_h - frac * plot_h
        parts.append(
            f'<text x="{left - 8}" y="{y_pos + 4:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{y_val:g}</text>'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.1f}" y="{height - 14}" '
        f'text-anchor="middle" font-family="sans-serif" font-size="13">'
        f"{_esc(title)}</text>"
    )
    parts.append(
        f'<text x="18" y="{top + plot_h / 2:.1f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {top + plot_h / 2:.1f})">Frequency</text>'
    )
    parts.append("</svg>")

    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(parts) + "\n")


def _esc(text: str) -> str:
    return (
        str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )
