"""Recovery-quality metrics between recovered and true inclusion sets."""

from __future__ import annotations

from dataclasses import dataclass

from .grid import prolongate
from .levelset import LevelSet, count_components


@dataclass(frozen=True)
class RecoveryReport:
    iou: float
    symmetric_difference_area: float
    candidate_components: int
    truth_components: int


def _align(phi: LevelSet, truth: LevelSet) -> tuple[LevelSet, LevelSet]:
    if phi.grid == truth.grid:
        return phi, truth
    try:
        steps = phi.grid.refinement_steps_from(truth.grid)
    except ValueError:
        steps = -1
    if steps >= 0:
        return phi, LevelSet(prolongate(truth.field, phi.grid))
    steps = truth.grid.refinement_steps_from(phi.grid)  # raises if not nested
    return LevelSet(prolongate(phi.field, truth.grid)), truth


def compare_levelsets(phi: LevelSet, truth: LevelSet) -> RecoveryReport:
    """Cell-set IoU and symmetric difference of {phi > 0} against the truth.

    Cell sets use the same rule as the component counter (cells with any
    nodal value > 0). Nested grids are aligned by prolongating the coarser
    level-set; anything else is rejected.
    """
    phi, truth = _align(phi, truth)
    a = phi.inside_cells()
    b = truth.inside_cells()
    union = (a | b).sum()
    inter = (a & b).sum()
    iou = 1.0 if union == 0 else inter / union
    return RecoveryReport(
        iou=float(iou),
        symmetric_difference_area=float((a ^ b).sum() * phi.grid.cell_area),
        candidate_components=count_components(phi),
        truth_components=count_components(truth),
    )
