"""Distribution-robust pseudo-labeling for learning with noisy labels."""

from .bmm import BetaMixture, fit, normalize_losses, posterior, split
from .dataset import Dataset, generate_synthetic, load_dataset, save_dataset
from .nn import Classifier, forward
from .pipeline import RunConfig, RunReport, execute, run

__all__ = [
    "BetaMixture", "Classifier", "Dataset", "RunConfig", "RunReport", "execute", "fit", "forward",
    "generate_synthetic", "load_dataset", "normalize_losses", "posterior", "run", "save_dataset", "split",
]
