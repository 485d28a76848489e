from .clips import build_skeleton, generate_motion_clip
from .body import CapsuleBody, build_capsule_body
from .cloth import (ClothSpec, SimConfig, SimState, capsule_penetration,
                    collide_capsule, settle, stretch_residual, xpbd_step)
from .garments import (garment_by_name, load_garment_obj, make_cape,
                       make_skirt, make_tabard)
from .sequence import simulate_sequence

__all__ = [
    "build_skeleton", "generate_motion_clip",
    "CapsuleBody", "build_capsule_body",
    "ClothSpec", "SimConfig", "SimState", "xpbd_step", "collide_capsule",
    "settle", "stretch_residual", "capsule_penetration",
    "make_skirt", "make_cape", "make_tabard", "garment_by_name",
    "load_garment_obj", "simulate_sequence",
]
