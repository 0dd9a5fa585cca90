"""Labelling functions over box-union regions.

A proposition holds at a point when the point lies in the (closed) union
of boxes declared for it.  Strengthening erodes each box independently,
which under-approximates the true strengthening of a union; since
synthesis consumes formulas in negation normal form with negations
absorbed into complementary atoms, dropping propositions only makes
satisfaction harder, so the conservatism is sound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, Grid, erode_box

__all__ = ["LabellingSpec", "label", "strengthen", "cell_label", "region_cell_mask", "cell_mask"]

Region = tuple[Box, ...]


@dataclass
class LabellingSpec:
    """Ordered proposition alphabet with one box-union region each.

    ``complements`` optionally names, per atom, the atom carrying its
    negation; region complements are never computed automatically.
    """

    propositions: dict[str, Region]
    complements: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        dims = {b.dim for r in self.propositions.values() for b in r}
        if len(dims) > 1:
            raise ValueError("proposition regions have mixed dimensions")
        for name, comp in self.complements.items():
            if name not in self.propositions or comp not in self.propositions:
                raise ValueError(f"complement pair ({name}, {comp}) names unknown propositions")

    @property
    def alphabet(self) -> tuple[str, ...]:
        return tuple(self.propositions)

    def clip_to(self, box: Box) -> tuple["LabellingSpec", list[str]]:
        """Intersect every region box with ``box``; report what was clipped."""
        warnings: list[str] = []
        out: dict[str, Region] = {}
        for name, region in self.propositions.items():
            kept = []
            for b in region:
                clipped = b.intersect(box)
                if clipped is None:
                    warnings.append(f"proposition {name!r}: a box lies outside the state box")
                    continue
                if clipped != b:
                    warnings.append(f"proposition {name!r}: a box was clipped to the state box")
                kept.append(clipped)
            out[name] = tuple(kept)
        return LabellingSpec(out, dict(self.complements)), warnings


def label(spec: LabellingSpec, x) -> frozenset[str]:
    """Propositions whose closed region contains ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return frozenset(
        name
        for name, region in spec.propositions.items()
        if any(b.contains(x) for b in region)
    )


def strengthen(spec: LabellingSpec, eps: float) -> LabellingSpec:
    """Erode every box of every region by ``eps``; empty boxes drop out.

    Exact strengthening for single-box regions; a conservative
    under-approximation for unions.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    out: dict[str, Region] = {}
    for name, region in spec.propositions.items():
        eroded = tuple(e for e in (erode_box(b, eps) for b in region) if e is not None)
        out[name] = eroded
    return LabellingSpec(out, dict(spec.complements))


def region_cell_mask(region: Region, grid: Grid) -> np.ndarray:
    """Flat boolean mask of cells whose closed cube fits in a single region box.

    Equivalent to membership of the cell centre in the box eroded by half a
    cell width, which guarantees the proposition holds everywhere on the
    cell.
    """
    mask = np.zeros(grid.size, dtype=bool)
    half = grid.eta / 2.0
    for b in region:
        eroded = erode_box(b, half)
        if eroded is None:
            continue
        ranges = grid.centers_in_range(eroded.lower, eroded.upper)
        if ranges is None:
            continue
        klo, khi = ranges
        view = mask.reshape(grid.shape)
        sl = tuple(
            slice(int(l - g), int(h - g) + 1) for l, h, g in zip(klo, khi, grid.lo)
        )
        view[sl] = True
    return mask


def cell_mask(spec: LabellingSpec, grid: Grid, name: str) -> np.ndarray:
    return region_cell_mask(spec.propositions[name], grid)


def cell_label(spec: LabellingSpec, grid: Grid) -> dict[tuple[int, ...], frozenset[str]]:
    """Label every grid cell conservatively; unlabelled cells are omitted.

    A cell carries a proposition only when its closed cube is contained in
    one box of the proposition's region, so the cell label is a subset of
    the point label everywhere on the cell.
    """
    out: dict[tuple[int, ...], frozenset[str]] = {}
    per_prop: list[tuple[str, np.ndarray]] = [
        (name, cell_mask(spec, grid, name)) for name in spec.propositions
    ]
    for name, mask in per_prop:
        for flat in np.flatnonzero(mask):
            idx = grid.unflat(int(flat))
            prev = out.get(idx, frozenset())
            out[idx] = prev | {name}
    return out
