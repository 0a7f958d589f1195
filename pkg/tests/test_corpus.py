import json
import shutil

import numpy as np
import pytest

from lupi_affect.corpus import corpus_hash, read_corpus, read_session, validate_corpus, write_session
from lupi_affect.errors import CorpusFormatError


@pytest.fixture
def corpus_dir(tmp_path, tiny_sessions):
    root = tmp_path / "corpus"
    for s in tiny_sessions[:3]:
        write_session(s, root / s.participant_id)
    return root


def test_round_trip_is_lossless(corpus_dir, tiny_sessions):
    back = [read_session(corpus_dir / s.participant_id) for s in tiny_sessions[:3]]
    for orig, got in zip(tiny_sessions[:3], back):
        assert got.participant_id == orig.participant_id
        assert got.duration == orig.duration
        assert got.label_range == orig.label_range
        assert np.array_equal(got.frame_stream.frames, orig.frame_stream.frames)
        assert got.frame_stream.skip == 5
        for m, stream in orig.feature_streams.items():
            assert np.array_equal(got.feature_streams[m].vectors, stream.vectors)
            assert np.allclose(got.feature_streams[m].timestamps, stream.timestamps, atol=5e-4)
        for a, b in zip(orig.annotation_traces, got.annotation_traces):
            assert a.annotator_id == b.annotator_id
            assert np.array_equal(a.values, b.values)


def test_corpus_reader_decodes_effective_frames(corpus_dir, tiny_sessions):
    for orig, got in zip(tiny_sessions[:3], read_corpus(corpus_dir)):
        assert np.array_equal(got.frame_stream.frames[::5], orig.frame_stream.frames[::5])


def test_validation_report(corpus_dir, tiny_config):
    report = validate_corpus(corpus_dir)
    assert [s["participant_id"] for s in report["sessions"]] == ["P001", "P002", "P003"]
    s = report["sessions"][0]
    assert s["modalities"] == {"audio": tiny_config.privileged_dim}
    assert s["resolution"] == [32, 18]
    assert s["coverage"]["annotations"][0] == 0.0


def test_wrong_column_count_names_file_and_row(corpus_dir):
    path = corpus_dir / "P002" / "features_audio.csv"
    lines = path.read_text().splitlines()
    lines[4] = lines[4] + ",0.5"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusFormatError) as exc:
        read_corpus(corpus_dir)
    assert any("P002/features_audio.csv" in d and "row 5" in d for d in exc.value.diagnostics)


def test_missing_annotations_rejected(corpus_dir):
    (corpus_dir / "P001" / "annotations.csv").unlink()
    with pytest.raises(CorpusFormatError, match="annotations.csv: missing"):
        read_corpus(corpus_dir)


def test_declared_profile_dimension_mismatch(corpus_dir):
    meta_path = corpus_dir / "P001" / "meta.json"
    meta = json.loads(meta_path.read_text())
    meta["profile"] = "sewa"  # declares 65-dim audio, the files carry 32
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(CorpusFormatError) as exc:
        read_session(corpus_dir / "P001")
    assert any("audio" in d for d in exc.value.diagnostics)


def test_diagnostics_are_pooled_across_sessions(corpus_dir):
    (corpus_dir / "P001" / "annotations.csv").unlink()
    shutil.rmtree(corpus_dir / "P003" / "frames")
    with pytest.raises(CorpusFormatError) as exc:
        read_corpus(corpus_dir)
    text = "\n".join(exc.value.diagnostics)
    assert "P001" in text and "P003" in text


def test_short_coverage_rejected(corpus_dir):
    path = corpus_dir / "P001" / "annotations.csv"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:40]) + "\n")
    with pytest.raises(CorpusFormatError, match="does not cover"):
        read_session(corpus_dir / "P001")


def test_dimension_specific_annotation_file(corpus_dir):
    src = corpus_dir / "P001" / "annotations.csv"
    lines = src.read_text().splitlines()
    header, rows = lines[0], lines[1:]
    flipped = [r.split(",")[0] + "," + ",".join(repr(-float(v)) for v in r.split(",")[1:]) for r in rows]
    (corpus_dir / "P001" / "annotations_valence.csv").write_text("\n".join([header, *flipped]) + "\n")
    a = read_session(corpus_dir / "P001", load_frames=False, dimension="arousal")
    v = read_session(corpus_dir / "P001", load_frames=False, dimension="valence")
    assert np.array_equal(v.annotation_traces[0].values, -a.annotation_traces[0].values)


def test_corpus_hash_tracks_content(corpus_dir):
    h = corpus_hash(corpus_dir)
    assert h == corpus_hash(corpus_dir)
    (corpus_dir / "manifest.json").write_text("{}")
    assert corpus_hash(corpus_dir) == h  # the root manifest is excluded
    p = corpus_dir / "P001" / "meta.json"
    p.write_text(p.read_text() + " ")
    assert corpus_hash(corpus_dir) != h
