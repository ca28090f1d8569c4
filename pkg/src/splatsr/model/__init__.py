"""Mapping network from two LR views and a densified scaffold to HR Gaussians."""

from .compose import (ComposeError, OffsetCaps, OffsetField, compose, compose_tensors, normalize_rows,
                      opacity_shift)
from .config import ConfigError, NetworkConfig
from .decoder import CrossViewDecoder, UnsupportedConfigurationError
from .encoder import Block, PatchEncoder
from .grid import TokenGrid, patchify, sincos_2d
from .network import DirectHead, GaussianTensors, NetworkInput, SRNetwork, ViewInput
from .points import (OffsetPredictor, PointBlock, PointGeometry, knn_indices, local_attention,
                     median_nn_distance)
from .query import OUT_OF_VIEW, patch_index, query_features
from .refine import BidirectionalRefine
from .render_op import render_tensor
