from __future__ import annotations

import json

import pytest

from lva.cases import load_cases
from lva.episode import (
    BoxAnnotation,
    Clip,
    Dataset,
    Episode,
    EpisodeError,
    Question,
    SubtitleLine,
    UnknownClip,
    dumps_episode,
    episode_from_dict,
    episode_to_dict,
    load_dataset,
    load_episode,
    make_episode,
    save_episode,
    subtitles_for,
    validate_episode,
    window_run,
)
from lva.ingest import (
    ClipRecord,
    build_dataset,
    build_episode,
    clip_record_from_dict,
    clip_sort_key,
    episode_id_of,
    parse_srt,
    split_speaker,
)
from lva.episode import DanglingGoldClip, DuplicateClipId, MissingDuration, MixedEpisodes
from oracles import window_oracle

CHOICES = ["The Mall", "The Park", "The Office", "A Bus Stop", "The Store"]


def three_clip_records():
    return [
        ClipRecord(
            "s01e02_seg01_clip_02",
            90.0,
            [SubtitleLine(5.0, 7.0, "third clip", "Raj")],
            frame_refs=list(range(10)),
        ),
        ClipRecord(
            "s01e02_seg01_clip_00",
            60.0,
            [SubtitleLine(1.0, 3.0, "first a", "Penny"), SubtitleLine(4.0, 6.0, "first b", None)],
            frame_refs=list(range(10)),
        ),
        ClipRecord(
            "s01e02_seg01_clip_01",
            75.0,
            [SubtitleLine(10.0, 12.5, "second", "Leonard")],
            frame_refs=list(range(10)),
        ),
    ]


QA = [{"qid": "q1", "q": "Where?", **{f"a{i}": c for i, c in enumerate(CHOICES)}, "answer_idx": 3, "vid_name": "s01e02_seg01_clip_01"}]
BOXES = [
    {"vid_name": "s01e02_seg01_clip_01", "frame_index": 4, "bbox": {"left": 1, "top": 2, "width": 30, "height": 40, "label": "Leonard"}},
    {"clip_id": "s01e02_seg01_clip_02", "frame_index": 9, "entity": "Raj", "box": [5, 6, 7, 8]},
    {"clip_id": "s01e02_seg01_clip_00", "frame_index": 0, "entity": "Penny", "box": [0, 0, 10, 10]},
]


@pytest.fixture
def built():
    return build_episode(three_clip_records(), QA, BOXES)


class TestBuildEpisode:
    def test_offsets_and_total(self, built):
        assert [c.offset for c in built.clips] == [0.0, 60.0, 135.0]
        assert built.duration == 225.0
        assert [c.clip_id[-7:] for c in built.clips] == ["clip_00", "clip_01", "clip_02"]

    def test_subtitle_reindexing_exact(self, built):
        assert [(s.start, s.end) for s in built.subtitles] == [(1.0, 3.0), (4.0, 6.0), (70.0, 72.5), (140.0, 142.0)]
        assert [c.subtitle_range for c in built.clips] == [(0, 2), (2, 3), (3, 4)]
        assert built.clip_subtitles(built.clips[1])[0].text == "second"

    def test_local_10s_in_second_clip(self):
        recs = [ClipRecord("e_seg01_clip_00", 60.0), ClipRecord("e_seg01_clip_01", 75.0, [SubtitleLine(10, 11, "x")])]
        assert build_episode(recs).subtitles[0].start == 70.0

    def test_three_90s_clips(self):
        recs = [ClipRecord(f"e_seg01_clip_0{i}", 90.0) for i in range(3)]
        ep = build_episode(recs)
        assert [c.offset for c in ep.clips] == [0, 90, 180] and ep.duration == 270

    def test_question_mapping(self, built):
        q = built.question("q1")
        assert q.gold_clip_id == "s01e02_seg01_clip_01"
        assert q.gold_label == "a3" and q.choices[3] == "A Bus Stop"
        assert q.episode_id == "s01e02"

    def test_boxes_conserved(self, built):
        assert len(built.boxes) == len(BOXES)
        assert sorted((b.clip_id, b.frame_index) for b in built.boxes) == sorted(
            (b.get("clip_id") or b["vid_name"], b["frame_index"]) for b in BOXES
        )
        assert built.boxes[0].box == (1.0, 2.0, 30.0, 40.0) and built.boxes[0].entity == "Leonard"

    def test_valid(self, built):
        assert validate_episode(built) == []

    def test_errors(self):
        recs = three_clip_records()
        with pytest.raises(DuplicateClipId):
            build_episode(recs + [recs[0]])
        with pytest.raises(MissingDuration):
            build_episode([ClipRecord("e_seg01_clip_00", None)])
        with pytest.raises(DanglingGoldClip):
            build_episode(recs, [{**QA[0], "vid_name": "s01e02_seg01_clip_99"}])
        with pytest.raises(MixedEpisodes):
            build_episode(recs + [ClipRecord("s09e09_seg01_clip_00", 60.0)])


class TestRoundTrip:
    def test_byte_identical(self, built, tmp_path):
        path = save_episode(built, tmp_path / "ep.json")
        first = path.read_bytes()
        loaded = load_episode(path)
        assert loaded == built
        save_episode(loaded, tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == first

    def test_manifest_fields(self, built):
        d = json.loads(dumps_episode(built))
        assert d["schema_version"] == 1
        assert set(d["clips"][0]) >= {"clip_id", "index", "duration_s", "offset_s", "frame_refs"}
        assert set(d["subtitles"][0]) == {"start_s", "end_s", "speaker", "text"}
        assert set(d["questions"][0]) == {"question_id", "text", "choices", "gold_index", "gold_clip_id"}

    def test_rejects_unknown_schema(self, built):
        d = episode_to_dict(built)
        d["schema_version"] = 99
        with pytest.raises(EpisodeError):
            episode_from_dict(d)

    def test_unicode_preserved(self, tmp_path):
        ep = make_episode("e", [("e_seg01_clip_00", 60, [SubtitleLine(0, 1, "café ☕ ok", "Zoë")])])
        path = save_episode(ep, tmp_path / "e.json")
        assert "café" in path.read_text(encoding="utf-8")
        assert load_episode(path) == ep


class TestWindows:
    def test_enumeration_oracle(self):
        n = 10
        for index in range(n):
            for window in range(1, 8):
                lo, hi = window_run(index, window, n)
                assert set(range(lo, hi + 1)) == window_oracle(index, window, n)

    def test_examples(self):
        assert window_run(5, 2, 10) == (5, 6)
        assert window_run(0, 3, 10) == (0, 1)
        assert window_run(15, 1, 20) == (15, 15)
        with pytest.raises(ValueError):
            window_run(0, 0, 3)

    def test_subtitles_for(self, built):
        mid = built.clips[1].clip_id
        assert subtitles_for(built, mid, 1) == "Leonard: second"
        assert subtitles_for(built, mid, 3).splitlines() == ["Penny: first a", "first b", "Leonard: second", "Raj: third clip"]
        with pytest.raises(UnknownClip):
            subtitles_for(built, "nope")

    def test_clip_lookup_aliases(self, built):
        cid = built.clips[2].clip_id
        assert built.clip(f"<{cid}>").index == 2
        assert built.clip("<clip_1>").index == 1
        assert built.clip("clip2").index == 2
        with pytest.raises(UnknownClip):
            built.clip("<clip_7>")


class TestValidate:
    def test_non_cumulative_offset(self):
        clips = (Clip("a", 0, 60.0, 0.0), Clip("b", 1, 60.0, 50.0))
        codes = [v.code for v in validate_episode(Episode("e", clips))]
        assert codes == ["NonCumulativeOffset"]

    def test_dangling_gold_clip(self, built):
        bad = Question("qx", built.episode_id, "?", tuple(CHOICES), 0, "missing")
        ep = Episode(built.episode_id, built.clips, built.subtitles, built.questions + (bad,), built.boxes)
        assert [v.code for v in validate_episode(ep)] == ["DanglingGoldClip"]

    def test_many_codes(self, built):
        q = built.questions[0]
        ep = Episode(
            built.episode_id,
            built.clips,
            (SubtitleLine(5, 6, "b"), SubtitleLine(1, 1, "a")),
            (q, q, Question("q2", "other", "?", ("x",), 7, q.gold_clip_id)),
            (BoxAnnotation("zzz", 0, "", (0, 0, 1, 1)), BoxAnnotation(built.clips[0].clip_id, 50, "", (0, 0, 1, 1))),
        )
        codes = {v.code for v in validate_episode(ep)}
        assert codes >= {
            "UnsortedSubtitles",
            "InvalidSubtitleTiming",
            "DuplicateQuestionId",
            "QuestionEpisodeMismatch",
            "BadChoiceCount",
            "BadGoldIndex",
            "DanglingBoxClip",
            "BoxFrameOutOfRange",
        }

    def test_shipped_cases_are_clean(self):
        dataset, fixture = load_cases()
        for ep in dataset.episodes:
            assert validate_episode(ep) == []
        assert fixture.problems() == []


class TestIngest:
    def test_ids(self):
        assert episode_id_of("s05e06_seg02_clip_15") == "s05e06"
        assert clip_sort_key("s05e06_seg02_clip_15") < clip_sort_key("s05e06_seg10_clip_01")
        assert clip_sort_key("s05e06_seg02_clip_2") < clip_sort_key("s05e06_seg02_clip_10")

    @pytest.mark.parametrize(
        "text, speaker, rest",
        [
            ("Sheldon: Two peas in a pod.", "Sheldon", "Two peas in a pod."),
            ("(Mrs Cooper:) Here. Thank you.", "Mrs Cooper", "Here. Thank you."),
            ("Meet at 10:30 sharp", None, "Meet at 10:30 sharp"),
            ("No speaker here", None, "No speaker here"),
            ("This is a long lead in sentence: rest", None, "This is a long lead in sentence: rest"),
        ],
    )
    def test_split_speaker(self, text, speaker, rest):
        assert split_speaker(text) == (speaker, rest)

    def test_parse_srt(self):
        content = "1\n00:00:01,500 --> 00:00:03,000\nSheldon: Hello\nthere.\n\n2\n00:01:02,000 --> 00:01:04,250\nBye.\n"
        lines = parse_srt(content)
        assert lines == [SubtitleLine(1.5, 3.0, "Hello there.", "Sheldon"), SubtitleLine(62.0, 64.25, "Bye.", None)]

    def test_clip_record_aliases(self):
        rec = clip_record_from_dict({"vid_name": "s01e01_seg01_clip_00", "duration": 61})
        assert rec.clip_id == "s01e01_seg01_clip_00" and rec.duration == 61.0 and rec.episode_id == "s01e01"

    def test_build_dataset_directory(self, tmp_path):
        src = tmp_path / "in"
        (src / "clips").mkdir(parents=True)
        for i, dur in enumerate((60, 75, 90)):
            cid = f"s01e02_seg01_clip_{i:02d}"
            (src / "clips" / f"{cid}.json").write_text(json.dumps({"clip_id": cid, "duration_s": dur, "frame_refs": list(range(10))}))
            (src / "clips" / f"{cid}.srt").write_text(f"1\n00:00:0{i},000 --> 00:00:0{i + 1},000\nPenny: line {i}\n")
        (src / "qa.jsonl").write_text("\n".join(json.dumps(q) for q in QA) + "\n")
        (src / "boxes.jsonl").write_text("\n".join(json.dumps(b) for b in BOXES) + "\n")
        paths = build_dataset(src, tmp_path / "out")
        assert [p.name for p in paths] == ["s01e02.json"]
        ds = load_dataset(tmp_path / "out")
        ep = ds.episode("s01e02")
        assert [s.start for s in ep.subtitles] == [0.0, 61.0, 137.0]
        assert len(ep.boxes) == 3 and len(ds) == 1
        assert validate_episode(ep) == []

    def test_dataset_rejects_duplicate_question_ids(self, built):
        other = Episode("x", built.clips, built.subtitles, built.questions, ())
        with pytest.raises(EpisodeError):
            Dataset("d", (built, other))
