"""Static strictness analysis: pure size arithmetic, no tensor math.

A stride-s convolution keeps its sampling lattice aligned under quarter
turns iff (padded_extent - k) mod s == 0; the checker propagates extents
through the planned layer list and applies that residue test to every
strided layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..model import NetworkConfig, layer_plan


@dataclass(frozen=True)
class StrictnessRow:
    index: int
    name: str
    padded_in: int
    k: int
    s: int
    residue: int
    verdict: str  # "ok" | "broken"


@dataclass
class StrictnessReport:
    rows: list = field(default_factory=list)
    strict: bool = True

    def first_broken(self):
        for row in self.rows:
            if row.verdict == "broken":
                return row
        return None


def check_strictness(config: NetworkConfig, input_size: int = None) -> StrictnessReport:
    """Evaluate the residue condition for every planned convolution.

    Stride-1 layers cannot misalign and always pass; the overall verdict is
    the conjunction over strided layers.
    """
    if input_size is not None:
        config = replace(config, input_size=input_size)
    config.validate()
    report = StrictnessReport()
    for idx, planned in enumerate(layer_plan(config)):
        spec = planned.spec
        residue = spec.residue(planned.in_extent)
        ok = spec.s == 1 or residue == 0
        report.rows.append(StrictnessRow(
            index=idx,
            name=planned.name,
            padded_in=spec.padded_extent(planned.in_extent),
            k=spec.k,
            s=spec.s,
            residue=residue,
            verdict="ok" if ok else "broken",
        ))
        if not ok:
            report.strict = False
    return report
