"""Synthetic-control analysis of latent regional quality series."""

from ._core import (
    Panel,
    QualsynthError,
    __version__,
    annual_phi,
    fit_synth,
    hp_filter,
    kolmogorov_survival,
    ks_statistic,
    load_panel,
    mh_chain,
    parse_panel,
    placebo_pvalues,
    report,
    residualize,
    run,
    simgen,
    solve_simplex_qp,
)

__all__ = [
    "Panel",
    "QualsynthError",
    "__version__",
    "annual_phi",
    "fit_synth",
    "hp_filter",
    "kolmogorov_survival",
    "ks_statistic",
    "load_panel",
    "mh_chain",
    "parse_panel",
    "placebo_pvalues",
    "report",
    "residualize",
    "run",
    "simgen",
    "solve_simplex_qp",
]
