"""POD + neural-network surrogates for the parametric diffusion-reaction equation."""

from .fem import ParameterSample, solve_instance
from .mesh import Mesh, build_structured_mesh
from .pod import PodBasis, compute_pod, project, reconstruct
from .snapshots import SnapshotSet, generate_snapshots, sample_parameters
from .surrogate import MlpModel, TrainConfig, forward, init_model, predict_field, train_lm

__version__ = "0.1.0"
