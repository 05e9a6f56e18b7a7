"""
What the beamforming feedback keeps and what it throws away
===========================================================

A station reporting compressed beamforming feedback sends only the right
singular vectors V of its channel matrix at each subcarrier.  This script
simulates one multipath channel, computes that feedback and shows which
parts of H survive.

Run:  python3 demos/01_feedback_basics.py
"""

import numpy as np

from bfmlab.bfm import bfm_stack, esdm_shape, svd
from bfmlab.channel import SimConfig, draw_realization, load_profile, to_frequency_response

# One NLOS realization: nine taps, 10 ns apart, summed from two clusters.
profile = load_profile("model-b")
cfg = SimConfig(seed=0)
real = draw_realization(profile, cfg, index=0)
print("tap delays (ns):", np.round(real.delays_s * 1e9).astype(int))
print("tap powers     :", np.round(profile.powers, 4))

# Its frequency response over the 242 occupied subcarriers of an 80 MHz channel.
H = to_frequency_response(real, cfg).h
print("CSI stack       :", H.shape, "(subcarrier, rx, tx)")

# SVD per subcarrier.  The feedback is V with each column rotated so that
# its last entry is real and non-negative.
res = svd(H)
V = bfm_stack(H)
print("last row of V is real, >= 0:", np.allclose(V[:, -1, :].imag, 0), bool((V[:, -1, :].real >= 0).all()))

# Multiplying H by any unitary from the left changes |H| but not V.  That is
# exactly the information the estimator has to recover from context.
Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((2, 2)))
V_rot = bfm_stack(Q @ H)
print("V unchanged under H -> QH  :", np.allclose(V, V_rot))
print("|H| changed under H -> QH  :", not np.allclose(np.abs(H), np.abs(Q @ H)))

# The singular values are lost too.  Their spread across frequency:
print("sigma_1 range across band  : %.3f .. %.3f" % (res.sigma[:, 0].min(), res.sigma[:, 0].max()))

# What V is for: precoding with V and combining with U^H splits the channel
# into parallel scalar streams (eigenmode transmission).
x = np.array([1 + 1j, -0.5j])
y = esdm_shape(H[0], x)
print("stream gains recovered     :", np.round(np.abs(y) / np.abs(x), 6), "sigma:", np.round(res.sigma[0], 6))
