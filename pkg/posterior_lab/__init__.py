"""
posterior_lab: guided-diffusion posterior sampling on analytic Gaussian-mixture priors,
with exact denoising/inpainting posterior scores, DPS and DPS-w, umbrella sampling + WHAM,
and posterior-sampler diagnostics.
"""

__version__ = "0.1.0"
