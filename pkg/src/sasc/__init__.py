"""Sparse analysis image restoration with nonlocal and learned priors.

The solver alternates closed-form shrinkage of analysis feature maps with
gradient steps on the image, recentering the sparsity penalty at feature maps
predicted by patch self-similarity, a small convolutional network, or a blend
of the two.  Supports denoising, deblurring, and single-image
super-resolution on grayscale images.

All public functions are pure (no hidden state), so they are safe to call
from multiple threads as long as callers do not mutate shared arrays.
"""

from .grid import (
    Patch,
    aggregate_patches,
    extract_patch,
    load_image,
    psnr,
    save_image,
    ssim,
)
from .ops import (
    DegradationOp,
    FilterBank,
    apply_a,
    apply_h,
    apply_h_adjoint,
    bicubic_downsample_op,
    blur_op,
    conv,
    conv_adjoint,
    gaussian_downsample_op,
    gaussian_kernel,
    identity_op,
    load_filter_bank,
    make_dct_bank,
    power_iteration_lmax,
    resize_bicubic,
    save_filter_bank,
)
from .priornet import (
    ConvLayer,
    PriorNetWeights,
    external_features,
    infer,
    load_weights,
    read_weights,
    save_weights,
    write_weights,
)
from .selfsim import (
    PatchGroupIndex,
    build_group_index,
    nonlocal_features,
    nonlocal_image,
    refresh_weights,
)
from .solver import (
    CgResult,
    SolverConfig,
    Stage,
    load_stages,
    restore,
    restore_staged,
    save_stages,
    solve_x_exact,
    update_x,
)
from .sparsity import (
    mix_prior,
    objective,
    shrink_features,
    soft_threshold,
    update_features,
)

__version__ = "0.1.0"
