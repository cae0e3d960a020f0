import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage

from gru_snf import controller
from gru_snf.data import (
    DatasetSplit,
    KeypointSequence,
    evaluation_windows,
    gen_forked,
    load_keypoints,
    save_keypoints,
    window_split,
)
from gru_snf.errors import (
    ContractError,
    DataError,
    KeypointFormatError,
    PipelineIOError,
    ShapeError,
)


def _small(seed=3):
    return gen_forked(
        25,
        2,
        4,
        6,
        modes=2,
        noise_std=0.01,
        seed=seed,
        val_trajectories=10,
        test_trajectories=12,
        family_size=10,
    )


@pytest.fixture
def small_split():
    return _small()


def test_keypoint_sequence_validation():
    sequence = KeypointSequence(frames=np.zeros((3, 4)), seq_id="a")
    assert (sequence.length, sequence.dim, sequence.keypoints) == (3, 4, 2)
    with pytest.raises(ContractError):
        KeypointSequence(frames=np.zeros((1, 4)), seq_id="short")
    with pytest.raises(ShapeError):
        KeypointSequence(frames=np.zeros((3, 3)), seq_id="odd")
    with pytest.raises(DataError):
        KeypointSequence(frames=np.array([[0.0, np.nan]] * 2), seq_id="nan")


def test_dataset_split_validation():
    a = KeypointSequence(frames=np.zeros((2, 2)), seq_id="a")
    with pytest.raises(DataError):
        DatasetSplit(train=(a,), test=(a,))
    b = KeypointSequence(frames=np.zeros((2, 4)), seq_id="b")
    with pytest.raises(ShapeError):
        DatasetSplit(train=(a,), val=(b,))
    with pytest.raises(ContractError):
        DatasetSplit().dim


def test_split_sizes_and_ids(small_split):
    assert [len(small_split.train), len(small_split.val), len(small_split.test)] == [
        25,
        10,
        12,
    ]
    assert small_split.dim == 4
    assert small_split.train[0].seq_id == "train-0000-00"
    assert small_split.train[-1].family == "train-0002"
    assert all(s.length == 10 for s in small_split.sequences())
    assert small_split.spec["params"]["prefix"] == 4
    assert small_split.spec["seed"] == 3


def test_generation_is_deterministic(small_split):
    again = _small()
    other = _small(seed=4)
    assert list(again.sequences()) == list(small_split.sequences())
    assert not np.array_equal(other.train[0].frames, small_split.train[0].frames)


def test_generation_contract():
    with pytest.raises(ContractError):
        gen_forked(10, 2, 4, 6, modes=1, noise_std=0.0, seed=0)
    with pytest.raises(ContractError):
        gen_forked(0, 2, 4, 6, modes=2, noise_std=0.0, seed=0)
    with pytest.raises(ContractError):
        gen_forked(10, 2, 0, 6, modes=2, noise_std=0.0, seed=0)
    with pytest.raises(ContractError):
        gen_forked(10, 2, 4, 6, modes=2, noise_std=-1.0, seed=0)


def test_families_share_prefixes_and_fork_into_modes():
    split = gen_forked(40, 5, 10, 14, modes=2, noise_std=0.01, seed=0)
    for start in range(0, 40, 10):
        members = split.train[start : start + 10]
        finals = np.stack([m.frames[-1] for m in members])
        clusters = fcluster(linkage(finals, "single"), t=0.2, criterion="distance")
        assert clusters.max() == len({m.mode for m in members})
        prefixes = np.stack([m.frames[:10] for m in members])
        assert np.ptp(prefixes, axis=0).max() < 0.1


def test_noise_free_members_of_a_mode_coincide():
    split = gen_forked(10, 3, 5, 5, modes=2, noise_std=0.0, seed=1, family_size=10)
    by_mode = {}
    for member in split.train:
        by_mode.setdefault(member.mode, []).append(member.frames)
    for frames in by_mode.values():
        for other in frames[1:]:
            np.testing.assert_array_equal(other, frames[0])


def test_values_stay_in_range():
    split = gen_forked(100, 5, 10, 14, modes=3, noise_std=0.01, seed=2)
    values = np.concatenate([s.frames.ravel() for s in split.sequences()])
    assert np.abs(values).max() <= 1.5


def test_modes_are_balanced():
    split = gen_forked(1000, 1, 2, 2, modes=2, noise_std=0.0, seed=5)
    ones = sum(s.mode for s in split.train)
    # binomial(1000, 0.5): three standard deviations
    assert abs(ones - 500) < 3 * np.sqrt(250)


def test_window_split():
    frames = np.arange(16.0).reshape(8, 2)
    window, future = window_split(frames, 3, 4)
    np.testing.assert_array_equal(window, frames[:3])
    np.testing.assert_array_equal(future, frames[3:7])
    with pytest.raises(ContractError):
        window_split(frames, 5, 4)
    with pytest.raises(ContractError):
        window_split(frames, 0, 4)


def test_evaluation_windows_group_families(small_split):
    windows = evaluation_windows(small_split.test, 4, 6)
    assert [w.window_id for w in windows] == ["test-0000", "test-0001"]
    assert windows[0].truth_set.shape == (10, 6, 4)
    assert windows[1].truth_set.shape == (2, 6, 4)
    np.testing.assert_array_equal(windows[0].truth, windows[0].truth_set[0])
    np.testing.assert_array_equal(windows[0].window, small_split.test[0].frames[:4])
    assert len(windows[0].truth_modes) == 10
    assert len(evaluation_windows(small_split.test, 4, 6, limit=1)) == 1


def test_csv_roundtrip(tmp_path, small_split):
    save_keypoints(small_split, tmp_path / "data")
    assert (tmp_path / "data" / "dataset.json").exists()
    loaded = load_keypoints(tmp_path / "data")
    assert list(loaded.sequences()) == list(small_split.sequences())
    assert loaded.spec == small_split.spec


def test_hand_written_csv(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("seq_id,frame,kp0_x,kp0_y\na,0,0.5,1\na,1,0.25,-1\n")
    [sequence] = controller.read_keypoints(path)
    assert sequence.seq_id == "a"
    np.testing.assert_array_equal(sequence.frames, [[0.5, 1.0], [0.25, -1.0]])


def test_single_file_becomes_test_split(tmp_path):
    path = tmp_path / "external.csv"
    path.write_text(
        "seq_id,frame,kp0_x,kp0_y\n"
        "a,0,0,0\na,1,1,1\na,2,2,2\n"
        "b,0,1,0\nb,1,0,1\n"
    )
    split = load_keypoints(path)
    assert split.train == () and split.val == ()
    assert [s.seq_id for s in split.test] == ["a", "b"]
    assert split.spec == {"generator": "external", "source": str(path)}


@pytest.mark.parametrize(
    "body, line, message",
    [
        ("a,0,0,0\na,1,nan,0\n", 3, "non-finite"),
        ("a,0,0,0\na,1,0\n", 3, "expected 4 fields"),
        ("a,0,0,0\na,1,x,0\n", 3, "bad coordinate"),
        ("a,0,0,0\na,2,0,0\n", 3, "expected frame 1"),
        ("a,0,0,0\na,1,0,0\nb,0,0,0\nb,1,0,0\na,0,0,0\n", 6, "not contiguous"),
        ("a,0,0,0\nb,0,0,0\nb,1,0,0\n", 2, "fewer than 2 frames"),
    ],
)
def test_malformed_csv_rows(tmp_path, body, line, message):
    path = tmp_path / "bad.csv"
    path.write_text("seq_id,frame,kp0_x,kp0_y\n" + body)
    with pytest.raises(KeypointFormatError, match=message) as info:
        controller.read_keypoints(path)
    assert info.value.line == line


def test_malformed_csv_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("seq_id,frame,kp0_x,kp0_y,kp1_x\na,0,0,0,0\n")
    with pytest.raises(KeypointFormatError) as info:
        controller.read_keypoints(path)
    assert info.value.line == 1


def test_missing_split_and_reader(tmp_path, small_split):
    save_keypoints(small_split, tmp_path / "data")
    (tmp_path / "data" / "val.csv").unlink()
    with pytest.raises(DataError):
        load_keypoints(tmp_path / "data")
    with pytest.raises(PipelineIOError):
        controller.read_keypoints(tmp_path / "data.unknown")


@pytest.mark.parametrize("data_format, module", [("h5", "h5py"), ("zarr", "zarr")])
def test_binary_formats_roundtrip(tmp_path, small_split, data_format, module):
    pytest.importorskip(module)
    save_keypoints(small_split, tmp_path / "data", data_format=data_format)
    loaded = load_keypoints(tmp_path / "data")
    assert list(loaded.sequences()) == list(small_split.sequences())
    single = load_keypoints(tmp_path / "data" / f"test.{data_format}")
    assert [s.seq_id for s in single.test] == [s.seq_id for s in small_split.test]
