"""
latentveil: latent-space image obfuscation and its evaluation harness.

- Inverts images into the latent space of a differentiable blob generator
- DeepBlur: low-pass filters the latent and regenerates
- Pixel-space baselines (blur, pixelation, masking, adversarial noise)
- Fidelity metrics (PSNR, SSIM, MS-SSIM, FID) and re-identification threat models
- Usable as a CLI (via `python -m latentveil` or `latentveil` when installed)
"""

__version__ = "0.1.0"
