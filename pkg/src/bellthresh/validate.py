"""Self-validation checks: oracle equivalence and closed-form anchors.

Backs the ``validate`` CLI subcommand; each check returns (name, ok, detail)
so failures carry the offending numbers.
"""

from __future__ import annotations

import numpy as np

from . import bell, counting, quantum
from .detectors import PerfectStep, SmoothStep


def check_closed_form_anchors() -> tuple[str, bool, str]:
    s2 = bell.singlet_chsh_closed_form(2)
    l1 = bell.local_bound_closed_form(1)
    err = abs(s2 - 8.0 * np.sqrt(2.0) / 3.0)
    ok = err < 1e-12 and l1 == 2.0
    ordering = all(
        bell.singlet_chsh_limit_deficit(n) < bell.local_bound_limit_deficit(n)
        for n in range(1, 51)
    )
    ok = ok and ordering
    return (
        "closed_form_anchors",
        ok,
        f"S(2) err={err:.2e}, L(1)={l1}, ordering(1..50)={ordering}",
    )


def check_oracle_equivalence(max_m: int, seed: int = 0) -> tuple[str, bool, str]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for m in range(1, max_m + 1):
        for n in range(1, m + 1):
            for response in (PerfectStep(n), SmoothStep(n, 0.5)):
                for _ in range(5):
                    pp = rng.dirichlet(np.ones(4)).reshape(2, 2)
                    engine = counting.outcome_table(m, response, response, pp)
                    oracle = counting.enumerate_oracle_table(m, response, response, pp)
                    worst = max(worst, float(np.max(np.abs(engine - oracle))))
    return ("oracle_equivalence", worst < 1e-12, f"max |engine - oracle| = {worst:.2e} (m <= {max_m})")


def check_singlet_engine_vs_closed_form(max_n: int = 4) -> tuple[str, bool, str]:
    state = quantum.singlet()
    quad = bell.optimal_settings_quad()
    worst = 0.0
    for n in range(1, max_n + 1):
        f = PerfectStep(n)
        e = []
        for a, b in quad.pairs():
            joint = counting.outcome_table(n, f, f, quantum.pair_probabilities(state, a, b))
            e.append(bell.correlator_from_joint(joint))
        s = bell.chsh_value(*e)
        worst = max(worst, abs(s - bell.singlet_chsh_closed_form(n)))
    return ("singlet_engine_vs_closed_form", worst < 1e-10, f"max |S_engine - S_closed| = {worst:.2e}")


def check_werner_distribution() -> tuple[str, bool, str]:
    diff = float(np.max(np.abs(bell.werner_optimal_distribution() - bell.facet_center_distribution())))
    worst = max(
        abs(bell.ncopy_postselected_chsh(bell.facet_center_distribution(), n) - bell.local_bound_closed_form(n))
        for n in range(1, 7)
    )
    return (
        "werner_distribution",
        diff < 1e-12 and worst < 1e-12,
        f"table diff={diff:.2e}, n-copy vs closed bound diff={worst:.2e}",
    )


def run_checks(max_m: int = 5, seed: int = 0) -> list[tuple[str, bool, str]]:
    return [
        check_closed_form_anchors(),
        check_oracle_equivalence(max_m, seed),
        check_singlet_engine_vs_closed_form(),
        check_werner_distribution(),
    ]
