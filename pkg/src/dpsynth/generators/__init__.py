from .base import SyntheticGenerator, as_rng
from .gan import DPCWGAN
from .pgm import StarPGM
from .privsyn import PrivSyn, synthesize
from .rongauss import RonGauss
from .vae import DPCVAE

GENERATORS = {
    "rongauss": RonGauss,
    "vae": DPCVAE,
    "gan": DPCWGAN,
    "pgm": StarPGM,
    "privsyn": PrivSyn,
}

__all__ = ["DPCVAE", "DPCWGAN", "GENERATORS", "PrivSyn", "RonGauss", "StarPGM", "SyntheticGenerator", "as_rng", "synthesize"]
