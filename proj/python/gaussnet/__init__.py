"""Convolution kernels spanned by a Gaussian-derivative basis.

Thin re-export of the compiled module; images are float32 numpy arrays
of shape (batch, channels, height, width).
"""

try:
    from ._gaussnet import (  # installed package layout
        Network,
        derive_zp,
        gauss_basis,
        lipschitz_estimate,
        load_cifar10,
        subsample,
        synth_shapes,
        translate,
    )
except ImportError:  # build-tree layout: extension next to the package
    from _gaussnet import (
        Network,
        derive_zp,
        gauss_basis,
        lipschitz_estimate,
        load_cifar10,
        subsample,
        synth_shapes,
        translate,
    )

__all__ = [
    "Network",
    "derive_zp",
    "gauss_basis",
    "lipschitz_estimate",
    "load_cifar10",
    "subsample",
    "synth_shapes",
    "translate",
]
