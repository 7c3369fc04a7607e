"""Intermediate-layer-output regularised encoder-decoder training at desk scale.

The package trains a small Conformer-style encoder with a shared attention
decoder and a CTC head under three objectives:

* ``baseline``  - CTC + attention loss on the final encoder layer,
* ``proposed``  - additionally runs the same decoder on an intermediate layer,
* ``ilo_ctc``   - additionally attaches a CTC head to an intermediate layer,

and decodes with CTC greedy search, attention beam search, or hybrid
CTC/attention beam search.
"""
from .corpus import (BLANK, EOS, SOS, CoarseVocab, Corpus, ToyCorpusSpec, Utterance, Vocab,
                     coarse_vocab_view, corpus_wer, generate_corpus, load_corpus, save_corpus, wer)
from .ctc import (CTCInfeasibleError, ctc_loss, ctc_loss_batch, ctc_loss_bruteforce,
                  ctc_prefix_score)
from .decoder import DecoderConfig, SharedDecoder
from .decoding import (DecodeConfig, attention_beam_search, beam_search, ctc_greedy_decode,
                       decode_set, decode_utterance, hybrid_beam_search)
from .encoder import ConformerEncoder, EncoderConfig, EncoderOutput
from .losses import LossWeights, att_ce_loss, loss_baseline, loss_ilo_ctc, loss_proposed
from .model import ILOModel, build_model, make_batch
from .tensor import Tape, Tensor, backward, no_grad
from .training import (Trainer, TrainConfig, compare_regimes, noam_lr, spec_augment_lite,
                       validation_accuracy)

__version__ = "0.1.0"
