"""Fixed orthogonal latent codec standing in for a learned autoencoder.

encode: space-to-depth by ``p`` then an orthogonal channel mix ``M`` at every
site. decode applies ``M^T`` and depth-to-space, so both round trips are
exact up to float rounding.
"""

from __future__ import annotations

import numpy as np

from .autograd import Node, ops


def orthogonal_matrix(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))[None, :]


class LatentCodec:
    def __init__(self, patch: int = 4, channels: int = 1, seed: int = 0, matrix: np.ndarray | None = None):
        if patch < 1:
            raise ValueError("patch size must be >= 1")
        self.patch = patch
        self.channels = channels
        n = channels * patch * patch
        self.M = orthogonal_matrix(n, seed) if matrix is None else np.asarray(matrix, dtype=np.float64)
        if self.M.shape != (n, n):
            raise ValueError(f"mixing matrix must be {n}x{n}")
        if not np.allclose(self.M.T @ self.M, np.eye(n), atol=1e-10):
            raise ValueError("mixing matrix is not orthogonal")

    @property
    def latent_channels(self) -> int:
        return self.channels * self.patch**2

    def latent_shape(self, image_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        c, h, w = image_shape
        return (c * self.patch**2, h // self.patch, w // self.patch)

    def _space_to_depth(self, x: np.ndarray) -> np.ndarray:
        p = self.patch
        *lead, c, h, w = x.shape
        if h % p or w % p:
            raise ValueError(f"image size {h}x{w} not divisible by patch {p}")
        if c != self.channels:
            raise ValueError(f"codec expects {self.channels} channels, got {c}")
        y = x.reshape(*lead, c, h // p, p, w // p, p)
        nl = len(lead)
        y = y.transpose(*range(nl), nl, nl + 2, nl + 4, nl + 1, nl + 3)
        return y.reshape(*lead, c * p * p, h // p, w // p)

    def _depth_to_space(self, s: np.ndarray) -> np.ndarray:
        p = self.patch
        *lead, cp, h, w = s.shape
        c = cp // (p * p)
        nl = len(lead)
        y = s.reshape(*lead, c, p, p, h, w)
        y = y.transpose(*range(nl), nl, nl + 3, nl + 1, nl + 4, nl + 2)
        return y.reshape(*lead, c, h * p, w * p)

    def encode(self, x: np.ndarray) -> np.ndarray:
        """(…, C, H, W) image to (…, C p^2, H/p, W/p) latent."""
        s = self._space_to_depth(np.asarray(x, dtype=np.float64))
        return np.einsum("ij,...jhw->...ihw", self.M, s)

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-3] != self.latent_channels:
            raise ValueError(f"latent has {z.shape[-3]} channels, codec expects {self.latent_channels}")
        return self._depth_to_space(np.einsum("ji,...jhw->...ihw", self.M, z))

    def decode_node(self, z: Node) -> Node:
        """Differentiable decode of a batched (N, C p^2, h, w) latent."""
        n, cp, h, w = z.shape
        p, c = self.patch, self.channels
        y = ops.transpose(z, (0, 2, 3, 1))
        y = ops.matmul(ops.reshape(y, (n * h * w, cp)), ops.constant(self.M))
        y = ops.reshape(y, (n, h, w, c, p, p))
        y = ops.transpose(y, (0, 3, 1, 4, 2, 5))
        return ops.reshape(y, (n, c, h * p, w * p))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"codec.M": self.M.copy()}

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray], patch: int, channels: int = 1) -> "LatentCodec":
        return cls(patch=patch, channels=channels, matrix=state["codec.M"])
