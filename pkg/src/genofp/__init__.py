"""Robust fingerprinting of genomic SNP databases against correlation attacks."""

from .keyed_randomness import Fingerprint, gen_fingerprint
from .snp_model import FingerprintMask, JointModel, Pedigree, SimilarityModel, SnpDatabase, Trio
from .vanilla_scheme import ExtractionParams, InsertionParams, extract_fingerprint, insert_fingerprint

__version__ = "0.1.0"
