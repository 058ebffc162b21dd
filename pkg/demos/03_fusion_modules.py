"""The two fusion mechanisms: channel gating (PAM) and cross-attention (MIM)."""

import numpy as np

from rgbdseg import Tensor
from rgbdseg.mim import mim_forward, mim_init
from rgbdseg.pam import pam_forward, pam_fuse, pam_pair_init

rng = np.random.default_rng(3)
f_rgb = Tensor(rng.standard_normal((1, 8, 4, 4)))
f_dep = Tensor(rng.standard_normal((1, 8, 4, 4)))

# --- PAM: pool -> 1x1 conv -> sigmoid -> gated residual f + f*v ------------
pair = pam_pair_init(rng, 8, shared=False, dtype=np.float64)
f_tilde, gate = pam_forward(f_rgb, pair.rgb)
print("gate values lie in (0,1):", float(gate.data.min()), float(gate.data.max()))

# with zero conv parameters the gate is sigmoid(0)=0.5, so output = 1.5x input
pair.rgb.conv.w.data[:] = 0
pair.rgb.conv.b.data[:] = 0
f_tilde, _ = pam_forward(f_rgb, pair.rgb)
print("zero-parameter gate scales exactly 1.5x:",
      np.allclose(f_tilde.data, 1.5 * f_rgb.data))

fused = pam_fuse(f_rgb, f_dep, pair)
print("fused skip shape:", fused.shape)

# shared mode uses one parameter set for both modalities
shared = pam_pair_init(rng, 8, shared=True, dtype=np.float64)
print("shared gate is one object:", shared.rgb is shared.dep)

# --- MIM: each modality queries the other's keys, weights its own values ---
mim = mim_init(rng, 8, heads=2, dtype=np.float64)
out_rgb, out_dep, f_con = mim_forward(f_rgb, f_dep, mim)
print("cross-attended outputs keep the map shape:", out_rgb.shape, f_con.shape)

# zero value projections reduce the module to a pure residual passthrough
mim.wv_rgb.w.data[:] = 0
mim.wv_dep.w.data[:] = 0
out_rgb, out_dep, f_con = mim_forward(f_rgb, f_dep, mim)
print("zero-V passthrough returns the inputs exactly:",
      np.array_equal(out_rgb.data, f_rgb.data),
      np.array_equal(out_dep.data, f_dep.data))
