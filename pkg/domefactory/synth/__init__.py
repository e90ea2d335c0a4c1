from .markers import attach_markers, observe_markers
from .scene import (
    HUMAN,
    OBJECT,
    BACKGROUND,
    SceneSpec,
    FrameTruth,
    SyntheticScene,
    build_cameras,
    build_template,
    generate_scene,
    save_scene,
    load_scene,
)
