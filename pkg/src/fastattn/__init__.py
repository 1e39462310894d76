"""Linear-cost cosine attention kernels with verification-grade cost accounting."""

from .attention import (cosine_affinity, cosine_attention_quadratic, dot_affinity,
                        dot_attention_unnormalized, fast_attention,
                        fast_attention_backward, softmax_attention)
from .block import (FABlockConfig, FAWeights, channel_sweep_report, fa_block_forward,
                    init_fa_weights, load_fa_weights, save_fa_weights)
from .core import (FeatureMap, ShapeError, l2_normalize_rows, matmul, random_matrix,
                   softmax_rows, transpose)
from .counting import OpCount, count_ops
from .flops import (FlopsReport, core_ratio, flops_fast_attention_module,
                    flops_ratio, flops_self_attention_module, flops_spatiotemporal,
                    reference_table)
from .net import (NetConfig, Network, build_network, network_flops, placement_study,
                  stage_resolutions)
from .streaming import (EmptyCacheError, FrameCache, FrameContext, per_frame_cost,
                        read_stream_fixture, spatial_temporal_reference,
                        write_stream_fixture)
from .tensorio import (BadMagicError, TensorFormatError, TruncatedFileError,
                       UnsupportedFormatError, load_tensor, save_tensor)

__version__ = "0.1.0"
