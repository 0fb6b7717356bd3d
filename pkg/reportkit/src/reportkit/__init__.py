"""Figure rendering for dpghp run outputs."""

from .artifacts import ArtifactError, RunArtifacts, load_run
from .plots import KINDS, convergence_figure, evolution_figure, pdist_figure, plot_run

__version__ = "0.1.0"
