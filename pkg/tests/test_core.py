import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlpipe.core import (
    Box,
    CategoricalEntry,
    Dataset,
    DatasetFormatError,
    Discrete,
    HyperparamSpace,
    IntRangeEntry,
    RealRangeEntry,
    RngStream,
    Transition,
    dataset_bootstrap,
    read_dataset_jsonl,
    sample_assignment,
    space_contains,
    split_trajectories,
    validate_assignment,
    write_dataset_jsonl,
)


def make_transition(s, a, r, sn, absorbing=False, last=False):
    return Transition(np.asarray(s, dtype=float), np.asarray(a, dtype=float),
                      r, np.asarray(sn, dtype=float), absorbing, last)


def make_trajectory(length, state_dim=2, action_dim=1, start=0.0):
    ts = []
    for t in range(length):
        ts.append(make_transition(np.full(state_dim, start + t),
                                  np.full(action_dim, float(t)),
                                  float(t), np.full(state_dim, start + t + 1),
                                  absorbing=False, last=(t == length - 1)))
    return tuple(ts)


class TestRngStream:
    def test_same_path_same_draws(self):
        a = RngStream(7).child(1, 2).generator().random(4)
        b = RngStream(7).child(1, 2).generator().random(4)
        assert np.array_equal(a, b)

    def test_sibling_paths_differ(self):
        a = RngStream(7).child(0).generator().random(4)
        b = RngStream(7).child(1).generator().random(4)
        assert not np.array_equal(a, b)

    def test_child_extends_path(self):
        s = RngStream(3)
        assert s.child(4).child(5).path == (4, 5)

    def test_nested_vs_flat_child_equal(self):
        a = RngStream(3).child(1).child(2).generator().random(3)
        b = RngStream(3).child(1, 2).generator().random(3)
        assert np.array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = RngStream(1).generator().random(4)
        b = RngStream(2).generator().random(4)
        assert not np.array_equal(a, b)


class TestSpaces:
    def test_box_contains_interior_point(self):
        box = Box([-3.5, -3.5], [3.5, 3.5])
        assert space_contains(box, np.array([0.0, 0.0]))

    def test_box_rejects_boundary_violation(self):
        box = Box([-3.5, -3.5], [3.5, 3.5])
        assert not space_contains(box, np.array([3.6, 0.0]))

    def test_discrete_max_index(self):
        assert space_contains(Discrete(8), np.array([7.0]))

    def test_discrete_rejects_out_of_range(self):
        assert not space_contains(Discrete(8), np.array([8.0]))

    def test_dim_mismatch_raises(self):
        with pytest.raises(ValueError):
            space_contains(Box([-1.0], [1.0]), np.array([0.0, 0.0]))

    def test_box_clip(self):
        box = Box([-1.0, -1.0], [1.0, 1.0])
        assert np.array_equal(box.clip(np.array([2.0, -0.5])), np.array([1.0, -0.5]))

    def test_box_sample_batch_inside(self):
        box = Box([-2.0, 0.0], [2.0, 1.0])
        draws = box.sample_batch(100, RngStream(0).generator())
        assert draws.shape == (100, 2)
        assert np.all(draws >= box.low) and np.all(draws <= box.high)

    @given(st.integers(min_value=1, max_value=50), st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=30, deadline=None)
    def test_discrete_samples_are_members(self, n, seed):
        space = Discrete(n)
        g = RngStream(seed).generator()
        for _ in range(5):
            assert space_contains(space, space.sample(g))


class TestDataset:
    def test_offset_views(self):
        d = Dataset.from_trajectories([make_trajectory(3), make_trajectory(5)])
        parts = split_trajectories(d)
        assert [len(p) for p in parts] == [3, 5]

    def test_single_transition_trajectory(self):
        d = Dataset.from_trajectories([(make_transition([0.0], [1.0], 0.5, [1.0], last=True),)])
        assert len(split_trajectories(d)) == 1
        assert d.transitions[0].last

    def test_round_trip_concat(self):
        trajs = [make_trajectory(3), make_trajectory(2, start=9.0)]
        d = Dataset.from_trajectories(trajs)
        assert split_trajectories(d) == [tuple(t) for t in trajs]

    def test_last_flag_alignment_enforced(self):
        bad = make_trajectory(3)[:-1] + (make_transition([9.0, 9.0], [0.0], 0.0,
                                                         [9.0, 9.0], last=False),)
        with pytest.raises(ValueError):
            Dataset(bad, (0,))

    def test_column_accessors(self):
        d = Dataset.from_trajectories([make_trajectory(4)])
        assert d.states().shape == (4, 2)
        assert d.actions().shape == (4, 1)
        assert np.array_equal(d.rewards(), np.array([0.0, 1.0, 2.0, 3.0]))
        assert d.state_dim == 2 and d.action_dim == 1

    def test_bootstrap_singleton_is_identity(self):
        d = Dataset.from_trajectories([make_trajectory(3)])
        b = dataset_bootstrap(d, RngStream(0))
        assert split_trajectories(b) == split_trajectories(d)

    def test_bootstrap_resamples_whole_trajectories(self):
        trajs = [make_trajectory(2, start=0.0), make_trajectory(3, start=10.0),
                 make_trajectory(4, start=20.0)]
        d = Dataset.from_trajectories(trajs)
        b = dataset_bootstrap(d, RngStream(5))
        originals = [tuple(t) for t in trajs]
        parts = split_trajectories(b)
        assert len(parts) == 3
        for p in parts:
            assert p in originals

    def test_bootstrap_deterministic(self):
        d = Dataset.from_trajectories([make_trajectory(2), make_trajectory(3, start=5.0)])
        b1 = dataset_bootstrap(d, RngStream(9))
        b2 = dataset_bootstrap(d, RngStream(9))
        assert split_trajectories(b1) == split_trajectories(b2)

    @given(st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=5))
    @settings(max_examples=30, deadline=None)
    def test_offsets_partition_property(self, lengths):
        d = Dataset.from_trajectories([make_trajectory(n, start=10.0 * i)
                                       for i, n in enumerate(lengths)])
        parts = split_trajectories(d)
        assert [len(p) for p in parts] == lengths
        assert sum(len(p) for p in parts) == len(d.transitions)


class TestDatasetJsonl:
    def test_round_trip(self, tmp_path):
        d = Dataset.from_trajectories([make_trajectory(3), make_trajectory(2, start=4.0)])
        path = tmp_path / "d.jsonl"
        write_dataset_jsonl(d, path)
        back = read_dataset_jsonl(path)
        assert split_trajectories(back) == split_trajectories(d)

    def test_nan_round_trips_as_null(self, tmp_path):
        t = make_transition([math.nan, 1.0], [0.0], 0.0, [1.0, 2.0], last=True)
        d = Dataset((t,), (0,))
        path = tmp_path / "d.jsonl"
        write_dataset_jsonl(d, path)
        assert "null" in path.read_text().splitlines()[0]
        back = read_dataset_jsonl(path)
        assert math.isnan(back.transitions[0].state[0])
        assert back.transitions[0].state[1] == 1.0

    def test_rejects_nonzero_first_step(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        row = {"episode": 0, "t": 1, "s": [0.0], "a": [0.0], "r": 0.0,
               "s_next": [1.0], "absorbing": False, "last": True}
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(DatasetFormatError, match="line 1"):
            read_dataset_jsonl(path)

    def test_rejects_transition_after_last(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        rows = [
            {"episode": 0, "t": 0, "s": [0.0], "a": [0.0], "r": 0.0,
             "s_next": [1.0], "absorbing": False, "last": True},
            {"episode": 0, "t": 1, "s": [1.0], "a": [0.0], "r": 0.0,
             "s_next": [2.0], "absorbing": False, "last": True},
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        with pytest.raises(DatasetFormatError):
            read_dataset_jsonl(path)

    def test_rejects_missing_last_at_eof(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        row = {"episode": 0, "t": 0, "s": [0.0], "a": [0.0], "r": 0.0,
               "s_next": [1.0], "absorbing": False, "last": False}
        path.write_text(json.dumps(row) + "\n")
        with pytest.raises(DatasetFormatError):
            read_dataset_jsonl(path)

    def test_rejects_decreasing_episode_ids(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        rows = [
            {"episode": 1, "t": 0, "s": [0.0], "a": [0.0], "r": 0.0,
             "s_next": [1.0], "absorbing": False, "last": True},
            {"episode": 0, "t": 0, "s": [0.0], "a": [0.0], "r": 0.0,
             "s_next": [1.0], "absorbing": False, "last": True},
        ]
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        with pytest.raises(DatasetFormatError, match="line 2"):
            read_dataset_jsonl(path)


class TestHyperparamSpace:
    def space(self):
        return HyperparamSpace((
            CategoricalEntry("kind", ("a", "b", "c")),
            IntRangeEntry("n", 1, 10),
            RealRangeEntry("x", 0.5, 2.0),
            RealRangeEntry("lr", 1e-4, 1.0, "log"),
        ))

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            HyperparamSpace((IntRangeEntry("n", 0, 1), IntRangeEntry("n", 0, 2)))

    def test_log_scale_needs_positive_lo(self):
        with pytest.raises(ValueError):
            RealRangeEntry("lr", 0.0, 1.0, "log")

    def test_sample_in_domain(self):
        space = self.space()
        for seed in range(20):
            values = sample_assignment(space, RngStream(seed))
            validate_assignment(space, values)

    def test_validate_rejects_missing_name(self):
        space = self.space()
        values = sample_assignment(space, RngStream(0))
        del values["n"]
        with pytest.raises(ValueError):
            validate_assignment(space, values)

    def test_validate_rejects_out_of_domain(self):
        space = self.space()
        values = sample_assignment(space, RngStream(0))
        values["n"] = 11
        with pytest.raises(ValueError):
            validate_assignment(space, values)

    def test_log_sampling_covers_decades(self):
        space = HyperparamSpace((RealRangeEntry("lr", 1e-4, 1.0, "log"),))
        draws = [sample_assignment(space, RngStream(s))["lr"] for s in range(400)]
        # uniform in log space: about half the draws below the geometric midpoint
        below = sum(v < 1e-2 for v in draws)
        assert 120 < below < 280

    @given(st.integers(min_value=0, max_value=10**6))
    @settings(max_examples=50, deadline=None)
    def test_sampling_property(self, seed):
        space = self.space()
        validate_assignment(space, sample_assignment(space, RngStream(seed)))
