"""Training samples built from simulated CSI and its beamforming feedback.

One channel realization covers every occupied subcarrier.  It is cut into
``K / g`` contiguous groups of ``g`` subcarriers; each group becomes one
sample whose input holds Re/Im of the feedback entries and whose label holds
the CSI amplitudes divided by a dataset-wide scale.  The frequency axis is
zero-padded to a power of two and a mask marks the real bins.

Splits are made on realizations, never on groups, so all groups of one
realization land in the same split.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import container
from .bfm import BfmTensor, bfm_stack
from .channel import ChannelProfile, CsiTensor, SimConfig, load_profile, simulate_csi

DATASET_MAGIC = b"BFMC"
MAX_BLOCKS = 4
TEST_FRACTION = 0.1
VAL_FRACTION = 0.1


def padded_length(group_size: int) -> int:
    """Smallest power of two >= ``group_size``."""
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    return 1 << (group_size - 1).bit_length()


def blocks_for(freq_bins: int) -> int:
    """Encoder depth that a padded frequency axis of ``freq_bins`` supports."""
    return min(MAX_BLOCKS, freq_bins.bit_length() - 1)


def divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


@dataclass(frozen=True)
class Sample:
    input: np.ndarray       # (F_pad, A, 2)
    label: np.ndarray       # (F_pad, A, 1)
    valid_mask: np.ndarray  # (F_pad,) bool


def _check_group(group: slice, K: int) -> tuple[int, int]:
    if not isinstance(group, slice) or group.step not in (None, 1):
        raise ValueError("group must be a contiguous slice of subcarrier positions")
    start, stop, _ = group.indices(K)
    if stop <= start:
        raise ValueError("group is empty")
    return start, stop


def encode_sample(bfm: BfmTensor, csi: CsiTensor, scale: float, group: slice,
                  freq_bins: int | None = None) -> Sample:
    if tuple(bfm.subcarrier_indices) != tuple(csi.subcarrier_indices):
        raise ValueError("BFM and CSI cover different subcarriers")
    start, stop = _check_group(group, len(csi.subcarrier_indices))
    v = bfm.v[start:stop][None]
    a = np.abs(csi.h[start:stop])[None]
    x, y, m = _encode(v, a, scale, freq_bins or padded_length(stop - start))
    return Sample(x[0], y[0], m[0])


def _encode(v: np.ndarray, amp: np.ndarray, scale: float, freq_bins: int):
    """Vectorized encoding of ``(n, g, ...)`` feedback/amplitude stacks."""
    n, g = v.shape[:2]
    if v.shape[2] * v.shape[3] != amp.shape[2] * amp.shape[3]:
        raise ValueError("feedback and CSI matrices must have the same number of entries "
                         "(n_rx == n_tx)")
    if freq_bins < g:
        raise ValueError(f"freq_bins={freq_bins} shorter than group of {g}")
    A = amp.shape[2] * amp.shape[3]
    x = np.zeros((n, freq_bins, A, 2), dtype=np.float32)
    y = np.zeros((n, freq_bins, A, 1), dtype=np.float32)
    vf = v.reshape(n, g, A)
    x[:, :g, :, 0] = vf.real
    x[:, :g, :, 1] = vf.imag
    y[:, :g, :, 0] = amp.reshape(n, g, A) / scale
    m = np.zeros((n, freq_bins), dtype=bool)
    m[:, :g] = True
    return x, y, m


def decode_sample(sample: Sample, scale: float, n_tx: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Feedback matrices and amplitudes on the unmasked bins of ``sample``."""
    m = np.asarray(sample.valid_mask, dtype=bool)
    x = sample.input[m]
    v = (x[..., 0] + 1j * x[..., 1]).reshape(-1, n_tx, n_tx)
    amp = sample.label[m][..., 0].reshape(len(v), -1, n_tx) * scale
    return v, amp


def split_ranges(n_realizations: int) -> dict[str, tuple[int, int]]:
    """Contiguous train/val/test realization ranges: 10% test, then 10% of the rest for val."""
    n_test = int(round(TEST_FRACTION * n_realizations))
    pool = n_realizations - n_test
    n_val = int(round(VAL_FRACTION * pool))
    return {"train": (0, pool - n_val), "val": (pool - n_val, pool), "test": (pool, n_realizations)}


@dataclass
class DatasetFile:
    manifest: dict
    inputs: np.ndarray
    labels: np.ndarray
    masks: np.ndarray

    @property
    def scale(self) -> float:
        return float(self.manifest["scale"])

    @property
    def group_size(self) -> int:
        return int(self.manifest["group_size"])

    @property
    def freq_bins(self) -> int:
        return int(self.inputs.shape[1])

    def __len__(self) -> int:
        return len(self.inputs)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if name not in self.manifest["splits"]:
            raise KeyError(f"dataset has no {name!r} split")
        a, b = self.manifest["splits"][name]
        return self.inputs[a:b], self.labels[a:b], self.masks[a:b]

    def encode(self) -> bytes:
        return container.encode(DATASET_MAGIC, self.manifest, self._tensors())

    def digest(self) -> str:
        return hashlib.sha256(self.encode()).hexdigest()

    def _tensors(self) -> dict[str, np.ndarray]:
        return {"inputs": self.inputs, "labels": self.labels, "masks": self.masks.astype(np.uint8)}


def dataset_from_csi(h: np.ndarray, config: SimConfig, profile_name: str, group_size: int) -> DatasetFile:
    """Build a dataset for one group size from a CSI stack ``(n, K, n_rx, n_tx)``.

    Sweeps over group size call this on the same stack so every variant
    sees identical underlying channels.
    """
    n, K = h.shape[:2]
    if K % group_size:
        raise ValueError(f"group size {group_size} does not divide {K} subcarriers")
    per = K // group_size
    ranges = split_ranges(n)
    amp = np.abs(h)
    a, b = ranges["train"]
    scale = float(np.sqrt(np.mean(amp[a:b] ** 2))) if b > a else 1.0
    v = bfm_stack(h)
    freq_bins = padded_length(group_size)
    gshape = (n * per, group_size)
    x, y, m = _encode(v.reshape(*gshape, *v.shape[2:]), amp.reshape(*gshape, *amp.shape[2:]),
                      scale, freq_bins)
    manifest = {
        "schema_version": container.SCHEMA_VERSION,
        "kind": "dataset",
        "sim_config": config.to_json(),
        "sim_config_hash": config.digest(),
        "profile": profile_name,
        "seed": config.seed,
        "n_samples": n,
        "n_items": n * per,
        "group_size": group_size,
        "groups_per_realization": per,
        "freq_bins": freq_bins,
        "n_pairs": int(x.shape[2]),
        "scale": scale,
        "realization_splits": {k: list(r) for k, r in ranges.items()},
        "splits": {k: [r[0] * per, r[1] * per] for k, r in ranges.items()},
    }
    return DatasetFile(manifest, x, y, m)


def generate_dataset(config: SimConfig, profile: ChannelProfile | str, group_size: int) -> DatasetFile:
    profile = load_profile(profile)
    h = simulate_csi(profile, config)
    return dataset_from_csi(h, config, profile.name, group_size)


def save_dataset(path, ds: DatasetFile) -> None:
    container.write(path, DATASET_MAGIC, ds.manifest, ds._tensors())


def load_dataset(path) -> DatasetFile:
    manifest, t = container.read(path, DATASET_MAGIC)
    try:
        ds = DatasetFile(manifest, t["inputs"], t["labels"], t["masks"].astype(bool))
    except KeyError as exc:
        raise container.ContainerError(f"dataset is missing tensor {exc}") from None
    if manifest.get("kind") != "dataset" or len(ds.labels) != len(ds.inputs) or len(ds.masks) != len(ds.inputs):
        raise container.ContainerError("dataset manifest and tensors disagree")
    return ds
