"""Conditional VAE-GAN with adversarial information factorization."""

try:
    from ._factorkit import (  # type: ignore
        Model,
        bce,
        gan_loss,
        generate_dataset,
        kl_divergence,
        pixel_rule_labels,
        train,
        __version__,
    )
except ImportError:  # build-tree layout: extension next to the package dir
    from _factorkit import (  # type: ignore
        Model,
        bce,
        gan_loss,
        generate_dataset,
        kl_divergence,
        pixel_rule_labels,
        train,
        __version__,
    )

__all__ = [
    "Model",
    "bce",
    "gan_loss",
    "generate_dataset",
    "kl_divergence",
    "pixel_rule_labels",
    "train",
    "__version__",
]
