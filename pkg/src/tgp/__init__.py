"""GP-tilted density estimation with random Fourier features."""

from .errors import ConfigError, DataError, NumericalError, TgpError
from .evaluation import KdeModel, random_projection_eval
from .learn import fit_fd, fit_fvpd, fit_map, fit_ncfd
from .model import BaseMeasure, Hyperparams, TgpModel, default_hyperparams, empirical_base
from .modelfile import load_model, save_model
from .rff import RffBasis, frequency_covariance, sample_basis
from .sampling import draw_weighted, resample
from .suffstats import NoiseGrid, SuffStats, accumulate, collect, merge

__version__ = "0.1.0"
