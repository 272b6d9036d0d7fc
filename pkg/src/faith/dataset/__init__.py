from .images import load_image, load_mask, save_image, save_mask
from .manifest import (
    EditMethod,
    EditStep,
    ManifestError,
    SampleRecord,
    Source,
    canonicalize,
    load_manifest,
    parse_manifest,
    write_manifest,
)
from .partition import PartitionError, balanced_partition, read_splits, split_records, write_splits
from .samples import Sample, load_samples
from .quality import quality_filter, ssim
from .synth import MANIFEST_NAME, SynthConfig, make_sample, synth_generate

__all__ = [
    "EditMethod",
    "EditStep",
    "MANIFEST_NAME",
    "ManifestError",
    "PartitionError",
    "Sample",
    "SampleRecord",
    "load_samples",
    "Source",
    "SynthConfig",
    "balanced_partition",
    "canonicalize",
    "load_image",
    "load_manifest",
    "load_mask",
    "make_sample",
    "parse_manifest",
    "quality_filter",
    "read_splits",
    "save_image",
    "save_mask",
    "split_records",
    "ssim",
    "synth_generate",
    "write_manifest",
    "write_splits",
]
