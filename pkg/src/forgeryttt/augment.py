import numpy as np
import torch
import torch.nn.functional as F


def random_view(image: torch.Tensor, mask: torch.Tensor, rng: np.random.Generator, hflip: bool = True,
                crop: bool = True, crop_min: float = 0.8) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply one random flip/crop to a (3, H, W) image and its (H, W) mask.

    The crop side is a uniform fraction in [crop_min, 1] of the image side; the
    crop is resized back to (H, W), bilinear for the image and nearest for the mask.
    """
    H, W = image.shape[-2:]
    mask = (mask > 0.5).to(image.dtype)
    if hflip and rng.random() < 0.5:
        image = image.flip(-1)
        mask = mask.flip(-1)
    if crop:
        s = rng.uniform(crop_min, 1.0)
        ch, cw = max(1, int(round(s * H))), max(1, int(round(s * W)))
        top = int(rng.integers(0, H - ch + 1))
        left = int(rng.integers(0, W - cw + 1))
        image = image[:, top:top + ch, left:left + cw]
        mask = mask[top:top + ch, left:left + cw]
        if (ch, cw) != (H, W):
            image = F.interpolate(image[None], size=(H, W), mode="bilinear", align_corners=False)[0]
            mask = F.interpolate(mask[None, None], size=(H, W), mode="nearest-exact")[0, 0]
    return image, mask
