"""File formats: round trips, validation errors, streaming parse."""

import numpy as np
import pytest

from tubestream.decode import AnchorSet, CandidateBox, RawGrid, attr_width
from tubestream.linker import SequencingError
from tubestream.records import (
    DETECTIONS_HEADER,
    RecordError,
    iter_detection_rows,
    parse_annotations,
    parse_detections,
    parse_tubes,
    read_rawgrids,
    write_annotations,
    write_detections,
    write_rawgrids,
    write_tubes,
)
from tubestream.tubes import DetectionStream, FinalTube, GroundTruthTube


def sample_streams():
    streams = []
    for vid, n_frames in (("va", 4), ("vb", 2), ("vc", 5)):
        stream = DetectionStream(video_id=vid)
        rng = np.random.default_rng(hash(vid) % 1000)
        for t in range(1, n_frames + 1):
            for class_id in range(2):
                x1, y1 = rng.uniform(0, 0.5, 2)
                stream.add(
                    t,
                    CandidateBox(
                        class_id,
                        (float(x1), float(y1), float(x1 + 0.3), float(y1 + 0.2)),
                        float(rng.uniform(0.001, 1)),
                        float(rng.uniform(0, 1)),
                    ),
                )
        streams.append(stream)
    return streams


class TestDetections:
    def test_round_trip_byte_identical(self, tmp_path):
        path = tmp_path / "d.txt"
        write_detections(str(path), sample_streams())
        first = path.read_bytes()
        reparsed = parse_detections(str(path))
        path2 = tmp_path / "d2.txt"
        write_detections(str(path2), reparsed)
        assert path2.read_bytes() == first

    def test_three_video_fixture_counts(self, tmp_path):
        path = tmp_path / "d.txt"
        write_detections(str(path), sample_streams())
        streams = parse_detections(str(path))
        assert [s.video_id for s in streams] == ["va", "vb", "vc"]
        assert [len(s.frames) for s in streams] == [4, 2, 5]
        assert all(s.n_boxes() == 2 * len(s.frames) for s in streams)

    def test_out_of_range_confidence_names_field_and_line(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text(DETECTIONS_HEADER + "\nv 1 0 0.1 0.1 0.5 0.5 1.2 0.5\n")
        with pytest.raises(RecordError, match=r"d.txt:2: field confidence out of range"):
            list(iter_detection_rows(str(path)))

    def test_out_of_order_frame_is_sequencing_error(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text(
            DETECTIONS_HEADER + "\n"
            "v 2 0 0.1 0.1 0.5 0.5 0.9 0.5\n"
            "v 1 0 0.1 0.1 0.5 0.5 0.9 0.5\n"
        )
        with pytest.raises(SequencingError, match="frame 1"):
            list(iter_detection_rows(str(path)))

    def test_video_split_into_two_blocks_rejected(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text(
            DETECTIONS_HEADER + "\n"
            "v 1 0 0.1 0.1 0.5 0.5 0.9 0.5\n"
            "w 1 0 0.1 0.1 0.5 0.5 0.9 0.5\n"
            "v 2 0 0.1 0.1 0.5 0.5 0.9 0.5\n"
        )
        with pytest.raises(SequencingError, match="two blocks"):
            list(iter_detection_rows(str(path)))

    def test_bad_header_and_field_count(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("#something else\n")
        with pytest.raises(RecordError, match="bad header"):
            list(iter_detection_rows(str(path)))
        path.write_text(DETECTIONS_HEADER + "\nv 1 0 0.1\n")
        with pytest.raises(RecordError, match="expected 9 fields"):
            list(iter_detection_rows(str(path)))

    def test_degenerate_box_rejected(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text(DETECTIONS_HEADER + "\nv 1 0 0.5 0.1 0.5 0.5 0.9 0.5\n")
        with pytest.raises(RecordError, match="degenerate"):
            list(iter_detection_rows(str(path)))


class TestTubes:
    def test_round_trip(self, tmp_path):
        tubes = [
            FinalTube("va", 0, 2, 5, 0.75, tuple((f, (0.1, 0.2, 0.4, 0.6)) for f in (2, 3, 5))),
            FinalTube("va", 1, 1, 1, 0.5, ((1, (0.2, 0.2, 0.3, 0.3)),)),
        ]
        path = tmp_path / "t.txt"
        write_tubes(str(path), tubes)
        assert parse_tubes(str(path)) == tubes
        path2 = tmp_path / "t2.txt"
        write_tubes(str(path2), parse_tubes(str(path)))
        assert path2.read_bytes() == path.read_bytes()

    def test_entry_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("#tubestream tubes v1\nv 0 1 2 0.5 2 1,0.1,0.1,0.2,0.2\n")
        with pytest.raises(RecordError, match="declared 2 entries"):
            parse_tubes(str(path))

    def test_range_span_mismatch_rejected(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("#tubestream tubes v1\nv 0 1 5 0.5 1 2,0.1,0.1,0.2,0.2\n")
        with pytest.raises(RecordError, match="span"):
            parse_tubes(str(path))


class TestAnnotations:
    def test_round_trip(self, tmp_path):
        tubes = [
            GroundTruthTube("va", 0, 2, 4, ((0.1, 0.1, 0.5, 0.5),) * 3),
            GroundTruthTube("vb", 1, 1, 1, ((0.2, 0.2, 0.6, 0.6),)),
        ]
        path = tmp_path / "a.txt"
        write_annotations(str(path), tubes)
        assert parse_annotations(str(path)) == tubes

    def test_missing_frame_box_rejected(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("#tubestream annotations v1\nv 0 1 3 1,0.1,0.1,0.2,0.2 2,0.1,0.1,0.2,0.2\n")
        with pytest.raises(RecordError, match="covers 3 frames"):
            parse_annotations(str(path))


class TestRawGrids:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        anchors = AnchorSet(((1.0, 1.5), (2.0, 1.0)))
        frames = [
            ("v", t, RawGrid(2, 2, 1, rng.normal(size=(2, 2, 2, attr_width(1)))))
            for t in (1, 2)
        ]
        path = tmp_path / "g.txt"
        write_rawgrids(str(path), anchors, frames, (2, 2, 1))
        dims, got_anchors, reader = read_rawgrids(str(path))
        got = list(reader)
        assert dims == (2, 2, 1)
        assert got_anchors == anchors
        assert [(v, t) for v, t, _ in got] == [("v", 1), ("v", 2)]
        for (_, _, grid), (_, _, expect) in zip(got, frames):
            # 9 significant digits round-trip binary64 exactly
            np.testing.assert_array_equal(
                np.asarray([float(format(x, '.9g')) for x in expect.values.reshape(-1)]),
                grid.values.reshape(-1),
            )

    def test_value_count_validated(self, tmp_path):
        path = tmp_path / "g.txt"
        path.write_text("#tubestream rawgrid v1\ngrid 1 1 1\nanchors 1,1\nframe v 1 0.0 0.0\n")
        _, _, reader = read_rawgrids(str(path))
        with pytest.raises(RecordError, match="plus 8 values"):
            list(reader)
