"""
Tensors, gradients and the CTC loss
===================================

A tour of the small autodiff core the models are built on, ending with
the CTC loss on hand-made frame posteriors.
"""
import numpy as np

from iloreg import tensor as T
from iloreg.ctc import ctc_loss, ctc_loss_bruteforce, ctc_prefix_score

# Operations record themselves on the active tape; backward() walks it in reverse.
x = T.Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = T.Tensor(np.array([[0.5], [-1.0]]), requires_grad=True)
with T.Tape():
    y = T.matmul(x, w).sum()
    T.backward(y)
print("y =", y.data)
print("dy/dw =", w.grad.ravel())   # column sums of x

# Under no_grad nothing is recorded, which is how decoding runs.
with T.no_grad():
    print("softmax rows sum to", T.softmax(x, axis=-1).data.sum(axis=1))

# %%
# CTC on two frames, blank = 0, one label
# ---------------------------------------
# Each frame puts probability 0.5 on blank and 0.5 on label 1.  Three of the
# four frame paths collapse to [1], so the loss is -log(0.75).
lp = np.log(np.array([[0.5, 0.5], [0.5, 0.5]]))
print("ctc([1])        =", float(ctc_loss(T.Tensor(lp), [1]).data), " vs", -np.log(0.75))
print("brute force     =", ctc_loss_bruteforce(lp, [1]))

# A repeated label needs a blank in between, so [1, 1] does not fit in two frames.
try:
    ctc_loss(T.Tensor(lp), [1, 1])
except ValueError as err:
    print("ctc([1, 1])     ->", err)

# The prefix score used by hybrid decoding: log P(output starts with the prefix).
rng = np.random.default_rng(0)
z = rng.standard_normal((4, 3))
lp = z - np.logaddexp.reduce(z, axis=1, keepdims=True)
for prefix in ([], [1], [1, 2], [2, 1]):
    print(f"prefix {prefix!s:7} log-prob {ctc_prefix_score(lp, prefix):8.4f}")
