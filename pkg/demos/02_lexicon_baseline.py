"""The ontology/gazetteer baseline: longest-match scanning of criteria.

Shows the characteristic behaviors of dictionary NER: exact and synonym
hits, partial matches inside longer phrases, and off-dictionary misses.

    python demos/02_lexicon_baseline.py
"""

from pathlib import Path

from trialparse import corpus, lexicon

DATA = Path(__file__).resolve().parent.parent / "data"

lex = lexicon.load_lexicon(DATA / "sample_lexicon.tsv")
print(f"lexicon: {len(lex)} concepts, {len(lex.names)} searchable names\n")

PROBES = [
    "known hypersensitivity to nivolumab",  # partial match: only the drug
    "Pregnant Women",                        # multi-word, case-insensitive
    "active hematologic malignancy",         # inner phrase match
    "bone marrow transplantation",           # exact preferred name
    "moderate to severe ards",               # synonym hit
    "immune checkpoint inhibitors",          # off-dictionary: no match
    "arterial oxygen saturation",            # off-dictionary: no match
    "speaking and understanding English",    # off-dictionary: no match
]

for text in PROBES:
    criterion = corpus.Criterion(
        trial_id="demo", arm="inclusion", index=0, text=text, tokens=corpus.tokenize(text)
    )
    mentions = lexicon.match_entities(criterion, lex)
    if mentions:
        rendered = ", ".join(f"{m.surface!r} -> {m.entity_type}" for m in mentions)
    else:
        rendered = "(not found)"
    print(f"{text!r:<42} {rendered}")
