"""Fixed 2D sine-cosine position embeddings for patch tokens."""

import numpy as np


def get_1d_sincos_pos_embed_from_grid(embed_dim: int, pos: np.ndarray) -> np.ndarray:
    """(M,) positions to (M, embed_dim) embeddings; embed_dim must be even."""
    assert embed_dim % 2 == 0
    omega = np.arange(embed_dim // 2, dtype=np.float64)
    omega /= embed_dim / 2.0
    omega = 1.0 / 10000**omega
    out = np.einsum("m,d->md", pos.reshape(-1), omega)
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def get_2d_sincos_pos_embed(embed_dim: int, rows: int, cols: int) -> np.ndarray:
    """
    (rows*cols, embed_dim) embeddings in row-major patch order.

    Half the channels encode the row, half the column; embed_dim must be a
    multiple of 4.
    """
    assert embed_dim % 4 == 0, "sin-cos embedding width must be a multiple of 4"
    grid_h, grid_w = np.meshgrid(
        np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij"
    )
    emb_h = get_1d_sincos_pos_embed_from_grid(embed_dim // 2, grid_h)
    emb_w = get_1d_sincos_pos_embed_from_grid(embed_dim // 2, grid_w)
    return np.concatenate([emb_h, emb_w], axis=1)
