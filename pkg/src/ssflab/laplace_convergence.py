"""Uniformity diagnostics over indexed families of finite-volume values.

A family holds one value per (box size, admissible choice); the sup-deviation
profile measures worst-case distance from a reference at each size. The
consistency check couples the Laplace-space profiles at a t-grid with the
weighted-average profile: when the Laplace side has settled below tolerance at
the largest size, the weighted side is required to have settled too. Only this
forward implication is checked, never its converse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence


@dataclass(frozen=True)
class IndexedFamily:
    """Values indexed by (size index, choice index), choices varying per size."""

    n_values: tuple[float, ...]
    choice_labels: tuple[tuple[str, ...], ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.n_values:
            raise ValueError("family needs at least one size")
        if len(self.choice_labels) != len(self.n_values) or len(self.values) != len(
            self.n_values
        ):
            raise ValueError("per-size choice lists must align with n_values")
        for labels, vals in zip(self.choice_labels, self.values):
            if len(labels) != len(vals):
                raise ValueError("labels and values must align within each size")
            if len(labels) == 0:
                raise ValueError("every size needs at least one choice")

    @classmethod
    def from_rows(cls, rows: Sequence[tuple[float, str, float]]) -> "IndexedFamily":
        """Build from (n, choice_label, value) rows; sizes keep first-seen order."""
        by_n: dict[float, list[tuple[str, float]]] = {}
        for n, label, value in rows:
            by_n.setdefault(float(n), []).append((str(label), float(value)))
        ns = tuple(by_n)
        labels = tuple(tuple(lbl for lbl, _ in by_n[n]) for n in ns)
        vals = tuple(tuple(v for _, v in by_n[n]) for n in ns)
        return cls(ns, labels, vals)


def uniformity_profile(
    fam: IndexedFamily, reference: float
) -> list[tuple[float, float]]:
    """Per size, the sup over choices of |value - reference|."""
    out = []
    for n, vals in zip(fam.n_values, fam.values):
        out.append((n, max(abs(v - reference) for v in vals)))
    return out


@dataclass(frozen=True)
class ConsistencyReport:
    laplace_profiles: dict = field(default_factory=dict)  # t -> [(n, sup_dev)]
    weighted_profile: list = field(default_factory=list)
    premise_holds: bool = True
    conclusion_holds: bool = True
    verdict: str = "pass"  # pass | flag
    tol: float = 0.0
    tol_weighted: float = 0.0


def laplace_vs_weighted_consistency(
    laplace_families: Mapping[float, IndexedFamily],
    weighted_family: IndexedFamily,
    reference_laplace: Mapping[float, float],
    reference_weighted: float,
    tol: float,
    tol_weighted: float,
) -> ConsistencyReport:
    """Check the forward pattern: Laplace settled at every t => weighted settled.

    `laplace_families` maps each transform parameter t to the family of
    finite-volume Laplace values; all families must share the size axis with
    the weighted family.
    """
    if not laplace_families:
        raise ValueError("need at least one Laplace family")
    sizes = weighted_family.n_values
    for t, fam in laplace_families.items():
        if fam.n_values != sizes:
            raise ValueError(f"size axis mismatch between weighted family and t={t}")

    laplace_profiles = {
        t: uniformity_profile(fam, reference_laplace[t])
        for t, fam in laplace_families.items()
    }
    weighted_profile = uniformity_profile(weighted_family, reference_weighted)

    premise = all(prof[-1][1] < tol for prof in laplace_profiles.values())
    conclusion = weighted_profile[-1][1] < tol_weighted
    verdict = "pass" if (not premise or conclusion) else "flag"
    return ConsistencyReport(
        laplace_profiles=laplace_profiles,
        weighted_profile=weighted_profile,
        premise_holds=premise,
        conclusion_holds=conclusion,
        verdict=verdict,
        tol=tol,
        tol_weighted=tol_weighted,
    )
