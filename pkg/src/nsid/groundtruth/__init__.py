"""Synthetic populations with known receptive fields, and dataset I/O."""

from .dataset import (
    BadMagicError,
    Dataset,
    DatasetFormatError,
    ShapeHeaderError,
    TruncatedFileError,
    VersionMismatchError,
    load_dataset,
    read_container,
    save_dataset,
    write_container,
)
from .generate import draw_stimuli, make_dataset
from .kernels import DoGParams, make_dog_kernel
from .populations import (
    DegeneratePopulationError,
    PopulationSpec,
    StimulusTooSmallError,
    add_poisson_like_noise,
    build_teacher_cnn,
    build_two_type_population,
    calibrate_scale,
    homogeneous_population,
    simulate,
    simulate_linear,
    simulate_teacher,
    teacher_activations,
)
from .stimuli import IngestionError, gaussian_white_stimuli, natural_like_stimuli, pink_noise, read_pgm, write_pgm
