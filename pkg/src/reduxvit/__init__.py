"""A small vision transformer in pure numpy, trained with attention-guided
dynamic patch masking and a matrix-based Renyi-entropy bottleneck."""

from .autodiff import Tensor, jacobi_eigh, sym_eig
from .bdmm import BdmmConfig, MaskPlan, apply_mask, batch_mask_ratio, select_mask
from .config import Paths, ProbeConfig, RunConfig
from .data import (Dataset, SynthSpec, generate, load_checkpoint, load_dataset, read_image,
                   save_checkpoint, save_dataset, write_image)
from .errors import (BadMagicError, CheckpointError, ConfigError, DimensionError, ImageFormatError,
                     NumericError, TruncatedFileError, VersionMismatchError)
from .fusion import PatchImportanceMap, fuse, importance_maps, row_average, strip_class
from .renyi import (IbConfig, entropy_estimate, gram_gaussian, ib_loss, label_gram,
                    mutual_information, renyi_entropy)
from .trainer import SGD, StepReport, TrainConfig, Trainer, cosine_lr, predict, probe_mi, train_step
from .vit import ForwardTrace, ModelConfig, Params, embed, encode, forward_images, init_params, patchify

__version__ = "0.1.0"
