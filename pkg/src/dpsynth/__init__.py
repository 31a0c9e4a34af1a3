"""Differentially private synthetic tabular data with utility, statistical
and biological evaluation."""

from .dataset import LabeledTable, QuantileBinner, Standardizer, generate_planted, load_csv, split
from .generators import DPCVAE, DPCWGAN, GENERATORS, PrivSyn, RonGauss, StarPGM
from .privacy import PrivacySpec, calibrate_gaussian, calibrate_noise_multiplier, rdp_subsampled_gaussian, rdp_to_eps

__version__ = "0.1.0"
