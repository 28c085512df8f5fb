"""Full tracker model: parameter bundle and the per-frame forward pass.

Pipeline per frame and modality: tokenize (cue + templates + search), run the
shared trunk with cross-modal interaction hooks, aggregate the per-layer
features through the expert policy, slice template/search segments, align and
gate through the deformable cue module, fuse both modality responses, and
predict score/offset/size maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import (
    CamParams,
    RouterParams,
    aggregate,
    init_cam,
    init_router,
    route,
    select_experts,
    select_fixed_interval,
    select_manual,
)
from .alignment import AlignmentResult, CueState, DamParams, dam_forward, init_dam, initial_cues
from .backbone import (
    BackboneConfig,
    PatchEmbedParams,
    TokenLayout,
    VitBlockParams,
    assemble_tokens,
    forward_backbone,
    init_patch_embed,
    init_vit_block,
    patch_embed,
)
from .config import RunConfig
from .head import HeadParams, fuse, init_head, predict_maps
from .interaction import MfiParams, init_mfi
from .tensor import Tensor


@dataclass
class ModelParams:
    embed: PatchEmbedParams
    blocks: list[VitBlockParams]
    blocks_t: list[VitBlockParams] | None
    mfi: list[MfiParams]
    router: RouterParams
    cam: CamParams
    dam: DamParams
    head: HeadParams


def init_model(config: RunConfig, seed: int | None = None) -> ModelParams:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    bc = config.backbone()
    c = config.embed_dim
    blocks = [init_vit_block(rng, c, config.heads, config.ffn_ratio) for _ in range(config.depth)]
    blocks_t = None
    if not config.shared_trunk:
        blocks_t = [init_vit_block(rng, c, config.heads, config.ffn_ratio) for _ in range(config.depth)]
    return ModelParams(
        embed=init_patch_embed(rng, bc),
        blocks=blocks,
        blocks_t=blocks_t,
        mfi=[
            init_mfi(rng, c, config.compress_ratio, config.state_dim, config.mamba_layers, config.conv_width)
            for _ in config.mfi_layers
        ],
        router=init_router(rng, config.depth, c),
        cam=init_cam(rng, config.depth, c, config.experts_k),
        dam=init_dam(rng, c, config.heads, config.cue_count, config.offset_magnitude, config.ffn_ratio),
        head=init_head(rng, c, config.head_depth),
    )


def select_layers(config: RunConfig, scores: np.ndarray) -> list[int]:
    if config.selection == "topk":
        return select_experts(scores, config.experts_k)
    if config.selection == "fixed_interval":
        return select_fixed_interval(config.depth, 2)
    return select_manual(config.depth, config.manual_layers)


@dataclass
class FrameResult:
    score: Tensor  # [H_s, W_s] sigmoid map
    offset: Tensor  # [2, H_s, W_s]
    size: Tensor  # [2, H_s, W_s]
    score_logits: Tensor
    cue_r: CueState
    cue_t: CueState
    layout: TokenLayout
    router_scores: dict  # modality -> [L] raw logits (numpy)
    selected: dict  # modality -> ascending layer list
    alignment: AlignmentResult


def frame_forward(
    params: ModelParams,
    config: RunConfig,
    z0_pair: tuple[Tensor, Tensor],
    zt_pair: tuple[Tensor, Tensor],
    search_pair: tuple[Tensor, Tensor],
    cue_r: CueState,
    cue_t: CueState,
    training: bool = False,
) -> FrameResult:
    """One full pass over a (template, dynamic template, search) crop triple.

    Image tensors are [3, side, side] in [0, 1].  Cue states are carried by
    the caller across frames.
    """
    bc = config.backbone()
    tokens = {}
    layout = None
    for modality, cue, (z0_img, zt_img, s_img) in (
        ("r", cue_r, (z0_pair[0], zt_pair[0], search_pair[0])),
        ("t", cue_t, (z0_pair[1], zt_pair[1], search_pair[1])),
    ):
        z0 = patch_embed(z0_img, params.embed, bc, "template")
        zt = patch_embed(zt_img, params.embed, bc, "template")
        s = patch_embed(s_img, params.embed, bc, "search")
        tokens[modality], layout = assemble_tokens(cue.cue + params.embed.pos_cue, z0, zt, s)

    feats_r, feats_t = forward_backbone(
        tokens["r"],
        tokens["t"],
        params.blocks,
        mfi_layers=bc.mfi_layers,
        mfi_params=params.mfi,
        blocks_t=params.blocks_t,
    )

    router_scores = {}
    selected = {}
    agg = {}
    for modality, feats in (("r", feats_r), ("t", feats_t)):
        scores = route(feats, params.router)
        router_scores[modality] = scores.data.copy()
        selected[modality] = select_layers(config, scores.data)
        agg[modality] = aggregate(feats, selected[modality], params.cam)

    alignment = dam_forward(
        agg["r"][layout.z0],
        agg["r"][layout.zt],
        agg["t"][layout.z0],
        agg["t"][layout.zt],
        agg["r"][layout.search],
        agg["t"][layout.search],
        cue_r,
        cue_t,
        params.dam,
        cross_modal_keys=config.cross_modal_cue_keys,
    )

    fused = fuse(alignment.response_r, alignment.response_t, params.head)
    score, offset, size, logits = predict_maps(fused, params.head, training=training, with_logits=True)
    return FrameResult(
        score=score,
        offset=offset,
        size=size,
        score_logits=logits,
        cue_r=alignment.cue_r,
        cue_t=alignment.cue_t,
        layout=layout,
        router_scores=router_scores,
        selected=selected,
        alignment=alignment,
    )
