"""Compare the four alignment variants on the synthetic corpus.

Trains dot / multiply / add / none with the reference hyperparameters
(LSTM 128, attention 64, decoder 256, dropout 0.2, batch 64, 10 epochs)
and reports test accuracy, loss, and entity F1 per variant. Runs the
full-size model four times; expect a few minutes of CPU time. Observed
numbers from one run are recorded in docs/experiment_log.md.

    python demos/04_attention_comparison.py
"""

import time

import numpy as np

from trialparse import corpus, crf, evalkit, network, synthdata, trainer


def entity_f1(checkpoint, config, test_set, gold):
    predictions = []
    for seq in test_set:
        ids = np.array([checkpoint.vocab.index(t.surface) for t in seq.criterion.tokens])
        emissions, _ = network.forward_pass(
            checkpoint.params, ids, None, config.attention_variant,
            score_inputs=config.score_inputs,
        )
        path, _ = crf.viterbi_decode(emissions, checkpoint.params.transitions)
        tags = [checkpoint.tag_set.tag_name(i) for i in path]
        predictions.extend(
            corpus.decode_bio(corpus.TaggedSequence(criterion=seq.criterion, tags=tags))
        )
    return evalkit.entity_prf(predictions, gold).f1


def main():
    corp = synthdata.generate_corpus(seed=0, n_train=400, n_test=100)
    gold = corp.gold_mentions("test")
    print(f"{'variant':<10} {'accuracy':>9} {'loss':>8} {'entity F1':>10} {'seconds':>8}")
    for variant in ("multiply", "add", "dot", "none"):
        config = trainer.TrainConfig(
            attention_variant=variant,
            epochs=10,
            learning_rate=3e-3,
            seed=0,
        )
        started = time.time()
        checkpoint, _ = trainer.train(config, corp.train, corp.test)
        accuracy, loss = trainer.evaluate_model(checkpoint, corp.test)
        f1 = entity_f1(checkpoint, config, corp.test, gold)
        print(f"{variant:<10} {accuracy:>9.4f} {loss:>8.4f} {f1:>10.4f} {time.time() - started:>8.1f}")


if __name__ == "__main__":
    main()
