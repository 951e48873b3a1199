import numpy as np
import cv2


def tissue_raster(seed: int, size: int = 256) -> np.ndarray:
    """Normalized-style test raster: bright textured blobs on zero background."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    canvas = np.zeros((size, size), np.float32)
    for _ in range(6):
        cx, cy = rng.uniform(0.3 * size, 0.7 * size, 2)
        rx, ry = rng.uniform(0.05, 0.16, 2) * size
        canvas += np.exp(-(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2))
    noise = cv2.GaussianBlur(rng.standard_normal((size, size)).astype(np.float32), (0, 0), 2.0)
    tex = np.clip(canvas, 0, 1.0) * (0.75 + 1.5 * np.abs(noise))
    img = np.clip(tex * 400.0, 0, 255).astype(np.uint8)
    return img


def backward_warp_u8(img: np.ndarray, matrix_2x3: np.ndarray) -> np.ndarray:
    """Warp with an explicit backward map (ground-truth generator for tests)."""
    h, w = img.shape[:2]
    return cv2.warpAffine(img, np.asarray(matrix_2x3, np.float64), (w, h),
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)
