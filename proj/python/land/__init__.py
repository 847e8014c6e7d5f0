"""Latent diffusion for 3D phantom volumes.

Arrays are float64 numpy arrays shaped (C, D, H, W); masks are uint8 (D, H, W)
with labels 0 background, 1 lung, 2..6 nodule (texture = label - 1).
Pipeline functions take an optional config as a JSON string and return the
same report dicts the `land` CLI prints.
"""

import json as _json

from land._core import (
    NumericalError,
    ValidationError,
    build_id,
    config_hash,
    default_config,
    diffusion_train,
    downsample_mask,
    encode_mask,
    eps_from_v,
    eval_fid,
    eval_msssim,
    fid,
    frechet_distance,
    generate_phantom,
    gradcheck,
    gradcheck_cases,
    linear_schedule,
    min_snr_weight,
    ms_ssim3d,
    normalize_config,
    phantom_gen,
    q_sample,
    read_mask,
    read_volume,
    sample,
    ssim3d,
    v_target,
    vae_train,
    write_mask,
    write_volume,
    x0_from_v,
)

MODES = ("uncond", "nodule", "nodule+lung", "nodule+lung+texture")


def load_config(path):
    """Read and validate a JSON config file; returns the normalised JSON text."""
    with open(path) as f:
        return normalize_config(f.read())


def config_dict(config_json=None):
    return _json.loads(normalize_config(config_json) if config_json else default_config())
