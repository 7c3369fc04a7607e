"""
Decoding: CTC greedy, attention beam and hybrid beam
====================================================

Train a proposed-regime model briefly, then decode the test set three ways.
The intermediate connection is a training-time device only; the access
counter shows decoding never reads it.
"""
from iloreg import (DecodeConfig, DecoderConfig, EncoderConfig, ToyCorpusSpec, Trainer, TrainConfig,
                    build_model, corpus_wer, decode_set, generate_corpus)
from iloreg import encoder

corpus = generate_corpus(ToyCorpusSpec(num_train=300, num_dev=30, num_test=20))
model = build_model(EncoderConfig(num_layers=4, ilo_layer=3), DecoderConfig(), "proposed")
rows = Trainer(model, corpus, TrainConfig(regime="proposed", epochs=12, warmup_steps=150)).fit()
print(f"dev accuracy after {len(rows)} epochs: {rows[-1].dev_accuracy:.4f}")

refs = [u.labels for u in corpus.test]
encoder.reset_ilo_access_count()
for mode in ("ctc", "attention", "hybrid"):
    hyps = decode_set(model, corpus.test, DecodeConfig(mode=mode))
    print(f"{mode:9s} WER {corpus_wer(refs, hyps):6.2f}%")
print("intermediate memory reads while decoding:", encoder.ilo_access_count)

# %%
# A few hypotheses next to their references
hyps = decode_set(model, corpus.test[:5], DecodeConfig())
for u, h in zip(corpus.test[:5], hyps):
    print(f"{u.uid}  ref: {corpus.vocab.detokenize(u.labels):12s} hyp: {corpus.vocab.detokenize(h)}")
