"""Stochastic patch selection over transformer patch descriptors."""
from .attention import (Backbone, build_mask, extract_all, extract_patch_descriptor,
                        extract_subset, forward, forward_plain, grid_distance,
                        masked_similarity)
from .errors import (ContractError, EmptySelectionError, FormatError, ParameterError,
                     StochPatchError)
from .lemma import (CampaignData, LemmaConfig, run_campaign, run_trial, sampling_bound)
from .redundancy import (coherence, components_for, covariance, cosine_overlay,
                         explained_variance, pearson_matrix, row_projector, spectrum,
                         thin_svd)
from .selection import (build_position_adjusted, build_sparse, sample_fixed,
                        sample_probability_matrix, sample_threshold, select_and_build)
from .tensor import (DescriptorMatrix, GridShape, RngSeed, center, gen_low_rank,
                     read_tensor, top_energy_subset, write_tensor)

__version__ = "0.1.0"
