"""Training-free video editing driven by spatiotemporal relevance scores.

The package is organised around a toy latent-video denoiser whose attention
maps expose, at every diffusion timestep, how strongly each (frame, location)
token attends to every other one.  From those maps we build factorized
relevance volumes, invert clean latents into noise, and steer regeneration
toward a new prompt while a cosine objective keeps the relevance structure of
the source video intact.
"""

from strmatch.errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    InputError,
    ShapeError,
    StrMatchError,
)
from strmatch.formats import (
    Clip,
    CorpusSpec,
    decode_video,
    encode_video,
    gen_corpus,
    load_attention_record,
    load_checkpoint,
    load_corpus,
    load_pixel_mask,
    resample_mask,
    load_trajectory,
    read_tensor,
    save_attention_record,
    save_checkpoint,
    save_corpus,
    save_trajectory,
    write_tensor,
)
from strmatch.metrics import (
    FlowField,
    block_match_flow,
    latent_motion_error,
    masked_bg_distance,
    masked_fg_distance,
    motion_energy_error,
    motion_error,
    render_report,
)
from strmatch.model import (
    AttentionBlockMaps,
    AttentionRecord,
    DenoiserWeights,
    ModelConfig,
    PromptEmbedding,
    TrainConfig,
    denoise,
    embed_prompt,
    init_weights,
    tokenize,
    train_toy_denoiser,
)
from strmatch.pipeline import (
    EditConfig,
    EditResult,
    LatentMask,
    dilate_mask,
    edit,
    guidance_step,
    mask_mix,
    reconstruct,
)
from strmatch.relevance import (
    Neighborhood,
    STRScore,
    bidirectional_relevance,
    cost_report,
    directional_relevance,
    str_score,
    str_score_bruteforce,
)
from strmatch.solver import (
    NoiseSchedule,
    TrajectoryRecord,
    cfg_combine,
    ddim_step,
    invert,
    make_schedule,
)
from strmatch.tensor import Tensor, set_profile, use_profile

# keep `strmatch.tensor` referring to the submodule (the from-imports above
# would otherwise leave package attributes shadowing it)
from strmatch import tensor

__version__ = "0.1.0"
