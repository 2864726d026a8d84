"""Flat addressing of every optimizable scalar.

Layout: primitive-major scene blocks, then one block per image.
  primitive i: position(3), log_scale(3), rotation(4), opacity(1), sh(3*B)
  image j:     pose_rot(4), pose_trans(3), log_std_rot(3), log_std_trans(3),
               defocus_a(1), defocus_rho(1), color_gain(9), color_offset(3)
The mapping is bijective and stable for a fixed (n_primitives, sh_degree,
n_images), which is what the finite-difference oracle and Adam both rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .perimage import PerImageParams
from .scene import Scene, sh_basis_size

SCENE_GROUPS = ("position", "log_scale", "rotation", "opacity", "sh")
IMAGE_GROUPS = (
    "pose_rot",
    "pose_trans",
    "log_std_rot",
    "log_std_trans",
    "defocus_a",
    "defocus_rho",
    "color_gain",
    "color_offset",
)
GROUPS = SCENE_GROUPS + IMAGE_GROUPS

IMAGE_BLOCK = 4 + 3 + 3 + 3 + 1 + 1 + 9 + 3


@dataclass
class SceneGrads:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    @classmethod
    def zeros(cls, n: int, basis: int) -> "SceneGrads":
        return cls(
            positions=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            sh=np.zeros((n, basis, 3)),
        )


@dataclass
class ImageGrads:
    pose_rot: np.ndarray = field(default_factory=lambda: np.zeros(4))
    pose_trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    log_std_rot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    log_std_trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    defocus_a: float = 0.0
    defocus_rho: float = 0.0
    color_gain: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    color_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))


class ParamLayout:
    def __init__(self, n_primitives: int, sh_degree: int, n_images: int):
        self.n_primitives = n_primitives
        self.sh_degree = sh_degree
        self.n_images = n_images
        self.basis = sh_basis_size(sh_degree)
        self.prim_size = 11 + 3 * self.basis
        self.scene_size = n_primitives * self.prim_size
        self.size = self.scene_size + n_images * IMAGE_BLOCK
        self._group_codes = self._build_group_codes()

    @classmethod
    def for_problem(cls, scene: Scene, n_images: int) -> "ParamLayout":
        return cls(len(scene), scene.sh_degree, n_images)

    def _build_group_codes(self) -> np.ndarray:
        prim = np.empty(self.prim_size, dtype=np.int8)
        prim[0:3] = GROUPS.index("position")
        prim[3:6] = GROUPS.index("log_scale")
        prim[6:10] = GROUPS.index("rotation")
        prim[10] = GROUPS.index("opacity")
        prim[11:] = GROUPS.index("sh")
        img = np.empty(IMAGE_BLOCK, dtype=np.int8)
        img[0:4] = GROUPS.index("pose_rot")
        img[4:7] = GROUPS.index("pose_trans")
        img[7:10] = GROUPS.index("log_std_rot")
        img[10:13] = GROUPS.index("log_std_trans")
        img[13] = GROUPS.index("defocus_a")
        img[14] = GROUPS.index("defocus_rho")
        img[15:24] = GROUPS.index("color_gain")
        img[24:27] = GROUPS.index("color_offset")
        return np.concatenate([np.tile(prim, self.n_primitives), np.tile(img, self.n_images)])

    @property
    def group_codes(self) -> np.ndarray:
        return self._group_codes

    def group_name(self, index: int) -> str:
        return GROUPS[self._group_codes[index]]

    def group_mask(self, name: str) -> np.ndarray:
        return self._group_codes == GROUPS.index(name)

    def primitive_block(self, i: int) -> slice:
        return slice(i * self.prim_size, (i + 1) * self.prim_size)

    def image_block(self, j: int) -> slice:
        start = self.scene_size + j * IMAGE_BLOCK
        return slice(start, start + IMAGE_BLOCK)

    def address(self, index: int) -> str:
        """Human-readable location of a flat coordinate."""
        if index < self.scene_size:
            i, off = divmod(index, self.prim_size)
            if off < 3:
                return f"prim[{i}].position[{off}]"
            if off < 6:
                return f"prim[{i}].log_scale[{off - 3}]"
            if off < 10:
                return f"prim[{i}].rotation[{off - 6}]"
            if off == 10:
                return f"prim[{i}].opacity"
            b, c = divmod(off - 11, 3)
            return f"prim[{i}].sh[{b},{c}]"
        j, off = divmod(index - self.scene_size, IMAGE_BLOCK)
        if off < 4:
            return f"image[{j}].pose_rot[{off}]"
        if off < 7:
            return f"image[{j}].pose_trans[{off - 4}]"
        if off < 10:
            return f"image[{j}].log_std_rot[{off - 7}]"
        if off < 13:
            return f"image[{j}].log_std_trans[{off - 10}]"
        if off == 13:
            return f"image[{j}].defocus_a"
        if off == 14:
            return f"image[{j}].defocus_rho"
        if off < 24:
            r, c = divmod(off - 15, 3)
            return f"image[{j}].color_gain[{r},{c}]"
        return f"image[{j}].color_offset[{off - 24}]"

    # -- packing -----------------------------------------------------------

    def pack(self, scene: Scene, params_list: list[PerImageParams]) -> np.ndarray:
        assert len(scene) == self.n_primitives and len(params_list) == self.n_images
        vec = np.empty(self.size)
        block = np.concatenate(
            [
                scene.positions,
                scene.log_scales,
                scene.rotations,
                scene.opacity_logits[:, None],
                scene.sh.reshape(len(scene), -1),
            ],
            axis=1,
        )
        vec[: self.scene_size] = block.reshape(-1)
        for j, p in enumerate(params_list):
            sl = self.image_block(j)
            vec[sl] = np.concatenate(
                [
                    p.motion.rotation,
                    p.motion.translation,
                    p.motion.log_std_rot,
                    p.motion.log_std_trans,
                    [p.defocus.a, p.defocus.inv_focus_depth],
                    p.color.gain.reshape(-1),
                    p.color.offset,
                ]
            )
        return vec

    def unpack(
        self, vec: np.ndarray, base_params: list[PerImageParams]
    ) -> tuple[Scene, list[PerImageParams]]:
        """Rebuild scene and per-image params; enable flags come from the
        templates (they are not optimizable)."""
        block = vec[: self.scene_size].reshape(self.n_primitives, self.prim_size)
        scene = Scene(
            positions=block[:, 0:3].copy(),
            log_scales=block[:, 3:6].copy(),
            rotations=block[:, 6:10].copy(),
            opacity_logits=block[:, 10].copy(),
            sh=block[:, 11:].reshape(self.n_primitives, self.basis, 3).copy(),
            sh_degree=self.sh_degree,
        )
        params_list = []
        for j, base in enumerate(base_params):
            b = vec[self.image_block(j)]
            p = base.copy()
            p.motion.rotation = b[0:4].copy()
            p.motion.translation = b[4:7].copy()
            p.motion.log_std_rot = b[7:10].copy()
            p.motion.log_std_trans = b[10:13].copy()
            p.defocus.a = float(b[13])
            p.defocus.inv_focus_depth = float(b[14])
            p.color.gain = b[15:24].reshape(3, 3).copy()
            p.color.offset = b[24:27].copy()
            params_list.append(p)
        return scene, params_list

    def pack_grads(self, sg: SceneGrads, igs: list[ImageGrads]) -> np.ndarray:
        vec = np.empty(self.size)
        block = np.concatenate(
            [
                sg.positions,
                sg.log_scales,
                sg.rotations,
                sg.opacity_logits[:, None],
                sg.sh.reshape(self.n_primitives, -1),
            ],
            axis=1,
        )
        vec[: self.scene_size] = block.reshape(-1)
        for j, g in enumerate(igs):
            sl = self.image_block(j)
            vec[sl] = np.concatenate(
                [
                    g.pose_rot,
                    g.pose_trans,
                    g.log_std_rot,
                    g.log_std_trans,
                    [g.defocus_a, g.defocus_rho],
                    g.color_gain.reshape(-1),
                    g.color_offset,
                ]
            )
        return vec
