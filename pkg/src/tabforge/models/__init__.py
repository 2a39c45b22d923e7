from tabforge.models.ctgan import (
    CondLayout,
    CtganConfig,
    CtganModel,
    build_cond_vector,
    build_ctgan,
    ctgan_sample,
    ctgan_train_batch,
    gradient_penalty,
    sample_condition,
    sample_real_conditioned,
)
from tabforge.models.vae import (
    VaeConfig,
    VaeModel,
    build_vae,
    elbo_loss,
    stvaem_signatures,
    vae_forward,
    vae_sample,
)

__all__ = [
    "CondLayout",
    "CtganConfig",
    "CtganModel",
    "VaeConfig",
    "VaeModel",
    "build_cond_vector",
    "build_ctgan",
    "build_vae",
    "ctgan_sample",
    "ctgan_train_batch",
    "elbo_loss",
    "gradient_penalty",
    "sample_condition",
    "sample_real_conditioned",
    "stvaem_signatures",
    "vae_forward",
    "vae_sample",
]
