"""
Baseline, intermediate-memory regularization and intermediate CTC
=================================================================

Train the three regimes from one shared initialization on a small synthetic
corpus and watch validation accuracy.  Takes about a minute on a laptop.
"""
import numpy as np

from iloreg import (DecoderConfig, EncoderConfig, ToyCorpusSpec, TrainConfig, build_model,
                    compare_regimes, generate_corpus)

corpus = generate_corpus(ToyCorpusSpec(num_train=200, num_dev=40, num_test=20))
print(f"{len(corpus.train)} training utterances, vocabulary of {corpus.vocab.size} ids")
u = corpus.train[0]
print(u.uid, corpus.vocab.detokenize(u.labels), "->", u.features.shape, "feature frames")

enc = EncoderConfig(num_layers=4)
dec = DecoderConfig()

# The tapped layer feeds the same decoder a second time, so no weights are added.
# The intermediate-CTC comparison needs its own projection head.
for regime in ("baseline", "proposed", "ilo_ctc"):
    e = EncoderConfig(num_layers=4, ilo_layer=None if regime == "baseline" else 3)
    print(f"{regime:9s} parameters: {build_model(e, dec, regime).num_parameters()}")

# %%
# Training curves
# ---------------
table, runs = compare_regimes(corpus, enc, dec, TrainConfig(epochs=20, warmup_steps=100), ilo_layer=3)
print("\nepoch  baseline  proposed  ilo_ctc")
for epoch, *accs in table:
    print(f"{epoch:5d}  " + "  ".join(f"{a:8.4f}" for a in accs))

last = runs["proposed"][-1]
print(f"\nproposed final epoch: ctc {last.l_ctc:.3f}  att {last.l_att:.3f}  "
      f"att(intermediate) {last.l_inter:.3f}")
print("epoch 0 is the shared initial model:", np.ptp(table[0][1:]) == 0)
