"""Extraction front end for the volume retrieval engine.

Reads volumetric images, windows and resizes each axial slice, runs a
feature extractor, and writes the embedding store + metadata files the
engine ingests. Lives apart from the engine on purpose: the file formats
are the only coupling.
"""

__version__ = "0.1.0"

from .errors import InputError, ModelError, VolembedError
from .extract import ExtractionJob, ExtractionReport, extract, volume_id_for
from .labels import VolumeLabels, parse_slice_ranges, read_labels
from .models import FeatureExtractor, SeededProjection, load_model, register_model
from .nifti import read_volume, write_volume
from .preprocess import Preprocess
from .store import VolumeEmbeddings, default_metadata_path, write_store

__all__ = [name for name in dir() if not name.startswith("_")]
