"""A short walk through the tape-based autodiff engine."""

import numpy as np

from pano_gin import tensor as T
from pano_gin.tensor import GradTape, Tensor

# record a small computation and ask for gradients of a scalar
x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
with GradTape() as tape:
    y = T.tsum(T.mul(x, x))
(gx,) = tape.gradient(y, [x])
print("d/dx sum(x^2) =", gx.data)  # 2x

# compare against central differences
fd = T.finite_difference(lambda _: T.tsum(T.mul(x, x)), x, 1e-3)
print("finite difference:", fd.data)

# convolution forward and backward in double precision
with T.precision(np.float64):
    img = Tensor(np.random.default_rng(0).random((1, 1, 5, 5)), requires_grad=True)
    kernel = Tensor(np.ones((1, 1, 3, 3)), requires_grad=True)
    with GradTape() as tape:
        out = T.conv2d(img, kernel, None, 1, 1)
        loss = T.tsum(out)
    g_img, g_k = tape.gradient(loss, [img, kernel])
print("conv output", out.shape, "grad w.r.t. kernel:\n", np.round(g_k.data[0, 0], 3))

# second order: gradient of a gradient norm, the gradient-penalty building block
with GradTape() as outer:
    v = Tensor(np.array([[0.5, -1.0]]), requires_grad=True)
    with GradTape() as inner:
        s = T.tsum(T.mul(T.mul(v, v), v))
    (gv,) = inner.gradient(s, [v], create_graph=True)
    norm = T.tsum(T.mul(gv, gv))
(ggv,) = outer.gradient(norm, [v])
print("d/dv |3v^2|^2 =", ggv.data, "expected", 36 * v.data ** 3)
