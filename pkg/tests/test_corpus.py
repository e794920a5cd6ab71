import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialparse import corpus
from trialparse.corpus import (
    Criterion,
    EntityMention,
    TagSet,
    TaggedSequence,
    decode_bio,
    encode_bio,
    load_trials,
    segment_criteria,
    tokenize,
)
from trialparse.errors import DataFormatError


def make_criterion(text, trial_id="t1", arm="inclusion", index=0):
    return Criterion(trial_id=trial_id, arm=arm, index=index, text=text, tokens=tokenize(text))


class TestTokenize:
    def test_plain_whitespace(self):
        assert [t.surface for t in tokenize("known hypersensitivity to nivolumab")] == [
            "known",
            "hypersensitivity",
            "to",
            "nivolumab",
        ]

    def test_slash_joins_alphanumerics(self):
        assert [t.surface for t in tokenize("pao2/fio2 ratio")] == ["pao2/fio2", "ratio"]

    def test_punctuation_split(self):
        assert [t.surface for t in tokenize("age > 18,")] == ["age", ">", "18", ","]

    def test_decimal_preserved(self):
        assert [t.surface for t in tokenize("below 2.5 mg/dl")] == ["below", "2.5", "mg/dl"]

    def test_trailing_dot_split(self):
        assert [t.surface for t in tokenize("old.")] == ["old", "."]

    def test_empty(self):
        assert tokenize("") == []

    def test_offsets_exact(self):
        text = "serum creatinine below 2.0 mg/dl, stable."
        for tok in tokenize(text):
            assert text[tok.start : tok.end] == tok.surface
            assert not any(ch.isspace() for ch in tok.surface)

    def test_offsets_strictly_increasing(self):
        toks = tokenize("a-b c/d e.f 1.2")
        for prev, cur in zip(toks, toks[1:]):
            assert prev.end <= cur.start
            assert prev.start < prev.end

    @given(st.text(max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_property_offsets_and_surfaces(self, text):
        toks = tokenize(text)
        last_end = 0
        for tok in toks:
            assert tok.start >= last_end
            assert text[tok.start : tok.end] == tok.surface
            assert tok.surface and not any(ch.isspace() for ch in tok.surface)
            last_end = tok.end


class TestLoadTrials:
    def write(self, tmp_path, lines):
        path = tmp_path / "trials.jsonl"
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path

    def test_empty_text_flagged_not_dropped(self, tmp_path):
        path = self.write(
            tmp_path,
            [
                json.dumps({"trial_id": "a", "conditions": [], "eligibility_text": "Inclusion criteria: x."}),
                json.dumps({"trial_id": "b", "conditions": [], "eligibility_text": ""}),
                json.dumps({"trial_id": "c", "conditions": [], "eligibility_text": "Exclusion criteria: y."}),
            ],
        )
        records = load_trials(path)
        assert len(records) == 3
        flagged = [r for r in records if r.excluded]
        assert [r.trial_id for r in flagged] == ["b"]
        assert flagged[0].exclusion_reason == "no eligibility text"

    def test_empty_file(self, tmp_path):
        assert load_trials(self.write(tmp_path, [])) == []

    def test_mixed_case_heading_not_excluded(self, tmp_path):
        path = self.write(
            tmp_path,
            [json.dumps({"trial_id": "a", "conditions": [], "eligibility_text": "Inclusion Criteria: adults."})],
        )
        assert not load_trials(path)[0].excluded

    def test_missing_headings_flagged(self, tmp_path):
        path = self.write(
            tmp_path,
            [json.dumps({"trial_id": "a", "conditions": [], "eligibility_text": "adults over 18."})],
        )
        assert load_trials(path)[0].exclusion_reason == "missing criteria headings"

    def test_malformed_json_names_line(self, tmp_path):
        path = self.write(tmp_path, [json.dumps({"trial_id": "a", "eligibility_text": "x"}), "{oops"])
        with pytest.raises(DataFormatError, match=":2:"):
            load_trials(path)

    def test_duplicate_trial_id(self, tmp_path):
        row = json.dumps({"trial_id": "a", "conditions": [], "eligibility_text": "x"})
        with pytest.raises(DataFormatError, match="duplicate"):
            load_trials(self.write(tmp_path, [row, row]))

    def test_missing_trial_id(self, tmp_path):
        with pytest.raises(DataFormatError, match="trial_id"):
            load_trials(self.write(tmp_path, [json.dumps({"eligibility_text": "x"})]))

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(OSError):
            load_trials(tmp_path / "missing.jsonl")


class TestSegmentCriteria:
    def record(self, text, trial_id="t"):
        return corpus.TrialRecord(trial_id=trial_id, conditions=[], eligibility_text=text)

    def test_bullet_and_heading_example(self):
        text = (
            "Inclusion Criteria: - age over 18 years old. - Pregnant Women. "
            "Exclusion Criteria: - Active hematologic malignancy."
        )
        crits = segment_criteria(self.record(text))
        inclusion = [c for c in crits if c.arm == "inclusion"]
        exclusion = [c for c in crits if c.arm == "exclusion"]
        assert [c.text for c in inclusion] == ["age over 18 years old", "Pregnant Women"]
        assert [c.text for c in exclusion] == ["Active hematologic malignancy"]

    def test_only_inclusion_heading(self):
        crits = segment_criteria(self.record("inclusion criteria: adults; consent given"))
        assert [c.arm for c in crits] == ["inclusion", "inclusion"]

    def test_excluded_record_rejected(self):
        record = self.record("")
        record.exclusion_reason = "no eligibility text"
        with pytest.raises(ValueError, match="excluded"):
            segment_criteria(record)

    def test_numbered_list_prefixes_stripped(self):
        text = "Inclusion criteria: 1. first item. 2. second item.\n3) third item"
        crits = segment_criteria(self.record(text))
        assert [c.text for c in crits] == ["first item", "second item", "third item"]

    def test_indices_are_per_arm_ordinals(self):
        text = "inclusion criteria:\n- a\n- b\nexclusion criteria:\n- c"
        crits = segment_criteria(self.record(text))
        assert [(c.arm, c.index) for c in crits] == [("inclusion", 0), ("inclusion", 1), ("exclusion", 0)]

    def test_decimals_survive_terminator_split(self):
        crits = segment_criteria(self.record("inclusion criteria: creatinine below 2.5 mg/dl."))
        assert [c.text for c in crits] == ["creatinine below 2.5 mg/dl"]

    def test_deterministic(self):
        text = "Inclusion criteria:\n- a.\n- b\nExclusion criteria: c; d."
        first = segment_criteria(self.record(text))
        second = segment_criteria(self.record(text))
        assert [(c.arm, c.index, c.text) for c in first] == [(c.arm, c.index, c.text) for c in second]

    def test_tokens_reconstruct_text(self):
        text = "inclusion criteria: pao2/fio2 ratio below 300."
        for c in segment_criteria(self.record(text)):
            rebuilt = " ".join(t.surface for t in c.tokens)
            assert " ".join(c.text.split()) == rebuilt or rebuilt  # whitespace-normalized

    def test_sample_file_matches_hand_counted_golden(self, sample_trials_path, golden_dir):
        golden = json.loads((golden_dir / "sample_criterion_counts.json").read_text())
        for record in load_trials(sample_trials_path):
            crits = segment_criteria(record)
            got = {
                "inclusion": sum(1 for c in crits if c.arm == "inclusion"),
                "exclusion": sum(1 for c in crits if c.arm == "exclusion"),
            }
            assert got == golden[record.trial_id], record.trial_id


class TestBioCodec:
    def mention(self, criterion, first, last, etype, confidence=1.0):
        return EntityMention(
            criterion_ref=criterion.ref,
            entity_type=etype,
            first=first,
            last=last,
            surface=criterion.text[criterion.tokens[first].start : criterion.tokens[last].end],
            confidence=confidence,
        )

    def test_encode_full_span(self):
        criterion = make_criterion("known hypersensitivity to nivolumab")
        tagged = encode_bio(criterion, [self.mention(criterion, 0, 3, "ALLERGY")])
        assert tagged.tags == ["B-ALLERGY", "I-ALLERGY", "I-ALLERGY", "I-ALLERGY"]

    def test_encode_no_mentions(self):
        criterion = make_criterion("a b c")
        assert encode_bio(criterion, []).tags == ["O", "O", "O"]

    def test_encode_adjacent_same_type(self):
        criterion = make_criterion("a b")
        tagged = encode_bio(
            criterion, [self.mention(criterion, 0, 0, "X"), self.mention(criterion, 1, 1, "X")]
        )
        assert tagged.tags == ["B-X", "B-X"]

    def test_encode_overlap_rejected_with_spans(self):
        criterion = make_criterion("a b c")
        with pytest.raises(ValueError, match=r"\[0, 1\].*\[1, 2\]"):
            encode_bio(criterion, [self.mention(criterion, 0, 1, "X"), self.mention(criterion, 1, 2, "Y")])

    def test_encode_out_of_bounds(self):
        criterion = make_criterion("a b")
        bad = EntityMention(criterion_ref=criterion.ref, entity_type="X", first=1, last=5, surface="b")
        with pytest.raises(ValueError, match="outside"):
            encode_bio(criterion, [bad])

    def test_decode_simple(self):
        criterion = make_criterion("age over limit")
        mentions = decode_bio(TaggedSequence(criterion=criterion, tags=["B-AGE", "I-AGE", "O"]))
        assert len(mentions) == 1
        assert (mentions[0].first, mentions[0].last, mentions[0].entity_type) == (0, 1, "AGE")
        assert mentions[0].surface == "age over"

    def test_decode_repairs_lone_inside_tag(self):
        criterion = make_criterion("a cancer")
        mentions = decode_bio(TaggedSequence(criterion=criterion, tags=["O", "I-CANCER"]))
        assert [(m.first, m.last, m.entity_type) for m in mentions] == [(1, 1, "CANCER")]

    def test_decode_type_switch_starts_new_mention(self):
        criterion = make_criterion("a b c")
        mentions = decode_bio(TaggedSequence(criterion=criterion, tags=["B-X", "I-Y", "I-Y"]))
        assert [(m.first, m.last, m.entity_type) for m in mentions] == [(0, 0, "X"), (1, 2, "Y")]

    def test_decode_malformed_tag_rejected(self):
        criterion = make_criterion("a")
        with pytest.raises(ValueError, match="malformed tag"):
            decode_bio(TaggedSequence(criterion=criterion, tags=["Q-X"]))

    def test_round_trip_random_mention_sets(self):
        rng = np.random.default_rng(12)
        types = ["A", "B", "C"]
        for _ in range(1000):
            n = int(rng.integers(1, 12))
            criterion = make_criterion(" ".join(f"w{i}" for i in range(n)))
            mentions = []
            pos = 0
            while pos < n:
                if rng.random() < 0.45:
                    length = int(rng.integers(1, min(3, n - pos) + 1))
                    mentions.append(
                        self.mention(criterion, pos, pos + length - 1, types[rng.integers(len(types))])
                    )
                    pos += length
                else:
                    pos += 1
            decoded = decode_bio(encode_bio(criterion, mentions))
            assert [(m.first, m.last, m.entity_type) for m in decoded] == [
                (m.first, m.last, m.entity_type) for m in mentions
            ]

    def test_emitted_tags_parse_to_inventory(self):
        tag_set = TagSet(["A", "B"])
        criterion = make_criterion("x y z")
        tagged = encode_bio(criterion, [self.mention(criterion, 0, 1, "A")])
        for tag in tagged.tags:
            assert tag in tag_set.tags


class TestTagSet:
    def test_default_eleven_types(self):
        ts = TagSet()
        assert len(ts.entity_types) == 11
        assert len(ts) == 23
        assert ts.tags[0] == "O"
        assert ts.tag_index("B-ALLERGY") == 1

    def test_round_trip_file(self, tmp_path):
        ts = TagSet(["X", "Y"])
        path = tmp_path / "tags.txt"
        ts.save(path)
        assert TagSet.load(path) == ts

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError, match="not in the configured tag set"):
            TagSet(["X"]).tag_index("B-Y")

    def test_duplicate_types_rejected(self):
        with pytest.raises(ValueError):
            TagSet(["X", "X"])


class TestFileFormats:
    def test_criteria_jsonl_round_trip(self, tmp_path):
        crits = [make_criterion("age over 18 years", index=i) for i in range(3)]
        path = tmp_path / "criteria.jsonl"
        corpus.write_criteria_jsonl(crits, path)
        loaded = corpus.read_criteria_jsonl(path)
        assert [(c.trial_id, c.arm, c.index, c.text) for c in loaded] == [
            (c.trial_id, c.arm, c.index, c.text) for c in crits
        ]
        assert loaded[0].tokens == crits[0].tokens

    def test_conll_round_trip(self, tmp_path):
        criterion = make_criterion("adults with pneumonia")
        tagged = TaggedSequence(criterion=criterion, tags=["O", "O", "B-CHRONIC_DISEASE"])
        path = tmp_path / "data.conll"
        corpus.write_conll([tagged], path)
        content = path.read_text(encoding="utf-8")
        assert content == "adults\tO\nwith\tO\npneumonia\tB-CHRONIC_DISEASE\n\n"
        loaded = corpus.read_conll(path)
        assert len(loaded) == 1
        assert loaded[0].tags == tagged.tags
        assert [t.surface for t in loaded[0].criterion.tokens] == ["adults", "with", "pneumonia"]

    def test_conll_malformed_line(self, tmp_path):
        path = tmp_path / "bad.conll"
        path.write_text("token-without-tag\n", encoding="utf-8")
        with pytest.raises(DataFormatError, match=":1:"):
            corpus.read_conll(path)
