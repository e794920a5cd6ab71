"""Walk through ingestion: trials -> criteria -> tokens -> BIO tags.

Run from the repository root:

    python demos/01_corpus_pipeline.py
"""

from pathlib import Path

from trialparse import corpus

DATA = Path(__file__).resolve().parent.parent / "data"

records = corpus.load_trials(DATA / "sample_trials.jsonl")
print(f"loaded {len(records)} trials, {sum(r.excluded for r in records)} excluded")

# Segment one trial into criterion sentences.
record = records[0]
criteria = corpus.segment_criteria(record)
print(f"\n{record.trial_id} ({', '.join(record.conditions)}):")
for c in criteria:
    print(f"  [{c.arm}:{c.index}] {c.text}")

# Tokens carry exact character offsets into the criterion text.
criterion = criteria[1]
print(f"\ntokens of {criterion.text!r}:")
for tok in criterion.tokens:
    print(f"  {tok.start:>3}..{tok.end:<3} {tok.surface}")

# Mentions round-trip through the BIO tag encoding.
mention = corpus.EntityMention(
    criterion_ref=criterion.ref,
    entity_type="CHRONIC_DISEASE",
    first=1,
    last=3,
    surface=criterion.text[criterion.tokens[1].start : criterion.tokens[3].end],
)
tagged = corpus.encode_bio(criterion, [mention])
print("\nBIO tags:", tagged.tags)
decoded = corpus.decode_bio(tagged)
print("decoded back:", [(m.surface, m.entity_type, m.first, m.last) for m in decoded])

# The decoder is total: a lone I- tag is repaired to a mention start.
repaired = corpus.decode_bio(corpus.TaggedSequence(criterion=criterion, tags=["O", "I-AGE"] + ["O"] * (len(criterion.tokens) - 2)))
print("repaired lone I-AGE:", [(m.surface, m.first, m.last) for m in repaired])
