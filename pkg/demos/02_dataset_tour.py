"""
From channels to training samples
=================================

The same 1,000 realizations can be cut into samples of g adjacent
subcarriers for any g dividing 242.  g = 1 is per-subcarrier estimation,
g = 242 hands the network the whole band at once.  The total number of label
entries stays the same, only the sample shape changes.

Run:  python3 demos/02_dataset_tour.py
"""

from bfmlab.channel import SimConfig, load_profile, simulate_csi
from bfmlab.dataset import dataset_from_csi, decode_sample, Sample

sim = SimConfig(n_samples=1000, seed=0)
h = simulate_csi(load_profile("model-b"), sim)

print(" g   samples  input shape        train/val/test items  label entries")
for g in (1, 2, 11, 22, 121, 242):
    ds = dataset_from_csi(h, sim, "model-b", g)
    sp = ds.manifest["splits"]
    sizes = "/".join(str(b - a) for a, b in (sp["train"], sp["val"], sp["test"]))
    entries = int(ds.masks.sum()) * ds.inputs.shape[2]
    print(f"{g:3d}  {len(ds):8d}  {str(ds.inputs.shape[1:]):17s}  {sizes:20s}  {entries}")

# The frequency axis is padded to a power of two so the encoder can halve it
# cleanly.  A mask keeps padded bins out of the loss and the metric.
ds = dataset_from_csi(h, sim, "model-b", 11)
print("\ng=11 pads to", ds.freq_bins, "bins; valid bins per sample:", int(ds.masks[0].sum()))

# Labels are amplitudes divided by one scale taken from the training split.
print("amplitude scale (train RMS): %.4f" % ds.scale)

# Decoding a sample gives back the feedback matrices and true amplitudes.
v, amp = decode_sample(Sample(ds.inputs[0], ds.labels[0], ds.masks[0]), ds.scale)
print("decoded feedback", v.shape, "amplitudes", amp.shape)

# Splits are contiguous blocks of realizations, so every group cut from one
# realization lands in the same split.
print("realization splits:", ds.manifest["realization_splits"])
