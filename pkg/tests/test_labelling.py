import numpy as np
import pytest

from certabs.geometry import Box, Grid
from certabs.labelling import LabellingSpec, cell_label, cell_mask, label, strengthen

from conftest import dyadic


def box1(lo, hi):
    return Box((float(lo),), (float(hi),))


class TestLabel:
    def test_interior(self):
        spec = LabellingSpec({"p": (box1(0, 4),)})
        assert label(spec, [2.0]) == {"p"}

    def test_outside(self):
        spec = LabellingSpec({"p": (box1(0, 4),)})
        assert label(spec, [5.0]) == frozenset()

    def test_boundary_is_closed(self):
        spec = LabellingSpec({"p": (box1(0, 4),)})
        assert label(spec, [4.0]) == {"p"}

    def test_union_region(self):
        spec = LabellingSpec({"p": (box1(0, 1), box1(2, 3))})
        assert label(spec, [2.5]) == {"p"}
        assert label(spec, [1.5]) == frozenset()


class TestStrengthen:
    def test_single_box(self):
        spec = LabellingSpec({"p": (box1(0, 4),)})
        s = strengthen(spec, 1.0)
        assert s.propositions["p"] == (box1(1, 3),)
        assert label(s, [2.0]) == {"p"}
        assert label(s, [0.5]) == frozenset()

    def test_zero_is_identity(self):
        spec = LabellingSpec({"p": (box1(0, 4), box1(5, 6))})
        s = strengthen(spec, 0.0)
        assert s.propositions == spec.propositions

    def test_union_conservatism_witness(self):
        # per-box erosion keeps [0.4,0.6] u [1.4,1.6]; the true strengthening
        # of the union [0,2] would keep [0.4,1.6] and still contain x = 1
        spec = LabellingSpec({"p": (box1(0, 1), box1(1, 2))})
        s = strengthen(spec, 0.4)
        assert s.propositions["p"] == (box1(0.4, 0.6), box1(1.4, 1.6))
        assert label(s, [1.0]) == frozenset()
        dense = np.linspace(1.0 - 0.4, 1.0 + 0.4, 101)
        assert all(label(spec, [y]) == {"p"} for y in dense)

    def test_empty_boxes_drop_out(self):
        spec = LabellingSpec({"p": (box1(0, 1),)})
        s = strengthen(spec, 0.6)
        assert s.propositions["p"] == ()
        assert label(s, [0.5]) == frozenset()

    def test_complements_are_preserved(self):
        spec = LabellingSpec(
            {"p": (box1(0, 1),), "np": (box1(1, 2),)}, complements={"p": "np"}
        )
        assert strengthen(spec, 0.1).complements == {"p": "np"}


def _random_union_spec(rng) -> LabellingSpec:
    boxes = []
    for _ in range(int(rng.integers(1, 4))):
        lo = dyadic(rng, -4.0, 3.0)
        width = dyadic(rng, 0.0, 3.0)
        boxes.append(box1(lo, lo + width))
    return LabellingSpec({"p": tuple(boxes)})


class TestStrengthenAlgebra:
    def test_composition_subset_property(self):
        # strengthening by a sum refines any two-stage strengthening
        rng = np.random.default_rng(1234)
        for _ in range(10_000):
            spec = _random_union_spec(rng)
            e1 = dyadic(rng, 0.0, 1.0)
            e2 = e1 + dyadic(rng, 0.0, 1.0)
            x = [dyadic(rng, -5.0, 7.0)]
            combined = label(strengthen(spec, e1 + e2), x)
            staged = label(strengthen(strengthen(spec, e1), e2), x)
            assert combined <= staged

    def test_single_box_compositions_are_equal(self):
        rng = np.random.default_rng(77)
        for _ in range(2_000):
            lo = dyadic(rng, -2.0, 1.0)
            spec = LabellingSpec({"p": (box1(lo, lo + dyadic(rng, 0.0, 4.0)),)})
            e1 = dyadic(rng, 0.0, 1.0)
            e2 = dyadic(rng, 0.0, 1.0)
            x = [dyadic(rng, -3.0, 6.0)]
            assert label(strengthen(spec, e1 + e2), x) == label(
                strengthen(strengthen(spec, e1), e2), x
            )

    def test_antitone_in_eps(self):
        rng = np.random.default_rng(4321)
        for _ in range(5_000):
            spec = _random_union_spec(rng)
            e1 = dyadic(rng, 0.0, 1.0)
            e2 = e1 + dyadic(rng, 0.0, 1.0)
            x = [dyadic(rng, -5.0, 7.0)]
            assert label(strengthen(spec, e2), x) <= label(strengthen(spec, e1), x)

    def test_sound_against_dense_ball_sampling(self):
        # implemented strengthening only claims what holds on the whole ball
        rng = np.random.default_rng(2024)
        for _ in range(10_000):
            spec = _random_union_spec(rng)
            eps = float(rng.uniform(0, 1))
            x = float(rng.uniform(-5, 7))
            claimed = label(strengthen(spec, eps), [x])
            if "p" in claimed:
                for y in np.linspace(x - eps, x + eps, 33):
                    assert label(spec, [y]) == {"p"}


class TestCellLabel:
    def test_full_cover(self):
        grid = Grid.cover(box1(0, 2), 1.0)
        labels = cell_label(LabellingSpec({"p": (box1(0, 2),)}), grid)
        assert labels == {(0,): frozenset({"p"}), (1,): frozenset({"p"})}

    def test_partial_cover(self):
        grid = Grid.cover(box1(0, 2), 1.0)
        labels = cell_label(LabellingSpec({"p": (box1(0, 1.5),)}), grid)
        assert labels == {(0,): frozenset({"p"})}

    def test_empty_region(self):
        grid = Grid.cover(box1(0, 2), 1.0)
        assert cell_label(LabellingSpec({"p": ()}), grid) == {}

    def test_labelled_cell_implies_pointwise_label(self):
        rng = np.random.default_rng(5)
        grid = Grid.cover(Box((0.0, 0.0), (3.0, 3.0)), 0.4)
        spec = LabellingSpec(
            {"p": (Box((0.3, 0.1), (1.9, 2.2)), Box((1.5, 1.5), (2.9, 2.9)))}
        )
        mask = cell_mask(spec, grid, "p")
        for flat in np.flatnonzero(mask):
            idx = grid.unflat(int(flat))
            cube = grid.cell_box(idx)
            for _ in range(20):
                x = rng.uniform(cube.lower, cube.upper)
                assert "p" in label(spec, x)

    def test_mask_matches_dict(self):
        grid = Grid.cover(Box((0.0,), (2.0,)), 0.25)
        spec = LabellingSpec({"p": (box1(0.3, 1.1),), "q": (box1(0, 2),)})
        labels = cell_label(spec, grid)
        for name in ("p", "q"):
            mask = cell_mask(spec, grid, name)
            for i in range(grid.size):
                expected = name in labels.get(grid.unflat(i), frozenset())
                assert bool(mask[i]) == expected


class TestClip:
    def test_clip_warns_and_trims(self):
        spec = LabellingSpec({"p": (box1(-1, 5), box1(8, 9))})
        clipped, warnings = spec.clip_to(box1(0, 4))
        assert clipped.propositions["p"] == (box1(0, 4),)
        assert len(warnings) == 2

    def test_duplicate_names_rejected_by_construction(self):
        # dict keys are unique by construction; complements must resolve
        with pytest.raises(ValueError):
            LabellingSpec({"p": (box1(0, 1),)}, complements={"p": "q"})
