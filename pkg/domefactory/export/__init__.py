from .blending import blend_enhance, visible_layer_mask
from .meshing import extract_level_set, extract_mesh, pose_human_mesh, sample_density_grid
from .assets import (
    LayerRender,
    LayeredAsset,
    render_layers,
    save_layer_renders,
    load_layer_renders,
    build_layered_assets,
    export_assets,
)
