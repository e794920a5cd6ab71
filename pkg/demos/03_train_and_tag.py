"""Train a small tagger on the synthetic corpus and inspect its output.

Uses reduced dimensions so the whole script runs in a few seconds; the
full-size reference configuration lives in demos/04_attention_comparison.py.

    python demos/03_train_and_tag.py
"""

import logging

import numpy as np

from trialparse import corpus, crf, network, synthdata, trainer

logging.basicConfig(level=logging.INFO, format="%(message)s")

corp = synthdata.generate_corpus(seed=0, n_train=120, n_test=40)
print(f"train {len(corp.train)} / test {len(corp.test)} criteria, types: {corp.entity_types}")

config = trainer.TrainConfig(
    d_e=32,
    d_h=24,
    d_a=12,
    d_z=48,
    d_m=32,
    dropout=0.2,
    batch_size=16,
    epochs=6,
    attention_variant="multiply",
    learning_rate=5e-3,
    seed=1,
)
checkpoint, history = trainer.train(config, corp.train, corp.test)
accuracy, loss = trainer.evaluate_model(checkpoint, corp.test)
print(f"\ntest token accuracy {accuracy:.3f}, mean per-token loss {loss:.3f}")

# Decode a few test criteria with token-marginal confidences.
print("\nsample decodes (confidence = weakest token posterior):")
for seq in corp.test[:5]:
    ids = np.array([checkpoint.vocab.index(t.surface) for t in seq.criterion.tokens])
    emissions, _ = network.forward_pass(
        checkpoint.params, ids, None, config.attention_variant
    )
    path, _ = crf.viterbi_decode(emissions, checkpoint.params.transitions)
    tagged = corpus.TaggedSequence(
        criterion=seq.criterion, tags=[checkpoint.tag_set.tag_name(i) for i in path]
    )
    marginals = crf.token_marginals(emissions, checkpoint.params.transitions)
    print(f"  {seq.criterion.text}")
    for mention in corpus.decode_bio(tagged):
        confidence = crf.entity_confidence(marginals, mention, checkpoint.tag_set)
        print(f"    {mention.surface!r} -> {mention.entity_type} (p={confidence:.2f})")
