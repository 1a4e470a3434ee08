"""Gated convolution: a feature branch scaled by a learned soft mask."""

import numpy as np

from pano_gin import tensor as T
from pano_gin.layers import GatedConv2d
from pano_gin.tensor import Tensor

rng = np.random.default_rng(0)
layer = GatedConv2d(3, 8, 4, 2, rng=rng)
layer.record_gates = True
x = Tensor(rng.random((1, 3, 16, 16)).astype(np.float32))
y = layer(x)
gate = layer.last_gate
print("output", y.shape, "gate range", float(gate.min()), float(gate.max()))

# zero the gate branch and every gate reads 0.5
layer.gate_weight.data[...] = 0
layer.gate_bias.data[...] = 0
feature = T.elu(layer._conv(x, layer.feature_weight, layer.feature_bias))
print("zero gate halves the feature branch:",
      np.allclose(layer(x).data, 0.5 * feature.data, atol=1e-5))

# a vanilla layer has no gate at all
plain = GatedConv2d(3, 8, 4, 2, gated=False, rng=rng)
print("vanilla parameters:", [n for n, _ in plain.named_parameters()])
