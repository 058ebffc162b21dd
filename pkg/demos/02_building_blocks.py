"""The network primitives: conv, batch norm, pooling, resizing, and their tapes."""

import numpy as np

from rgbdseg import Tensor, grad_check
from rgbdseg.ops import (
    adaptive_avg_pool2d,
    batch_norm,
    bn_init,
    conv2d,
    conv_init,
    max_pool_global,
    softmax,
    upsample,
)

rng = np.random.default_rng(7)
x = Tensor(rng.standard_normal((2, 3, 8, 8)))

# conv2d keeps spatial extents at stride 1 (same padding), halves them at 2
p = conv_init(rng, 5, 3, 3, bias=True, dtype=np.float64)
print("conv stride 1:", conv2d(x, p).shape)
print("conv stride 2:", conv2d(x, p, stride=2).shape)

# batch norm: training mode normalizes with batch stats and tracks running ones
bn = bn_init(5, dtype=np.float64)
h = batch_norm(conv2d(x, p), bn, training=True)
print("bn out mean/var per channel ~ 0/1:",
      h.data.mean(axis=(0, 2, 3)).round(6), h.data.var(axis=(0, 2, 3)).round(6))
print("running mean moved toward batch mean:", bn.running_mean.round(4))

# pooling and resizing are linear maps; both differentiate exactly
print("adaptive pool to 2x2:", adaptive_avg_pool2d(x, (2, 2)).shape)
print("global max pool:", max_pool_global(x).shape)
print("bilinear x2:", upsample(x, 2, mode="bilinear").shape)

# everything composes under grad_check
def f(ts):
    y = conv2d(ts["x"], p, stride=2)
    y = batch_norm(y, bn, training=True)
    y = adaptive_avg_pool2d(y.relu(), (2, 2))
    return (softmax(y.reshape(2, 20)) * w).sum()

w = rng.standard_normal((2, 20))
rep = grad_check(f, {"x": x, "w_conv": p.w, "b_conv": p.b})
print(f"composite pipeline grad check: {rep.max_rel_error:.2e}")
