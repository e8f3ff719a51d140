"""On-disk dataset layout.

::

    root/meta.json
    root/splits.json
    root/samples/<token>/points.bin     "SCFP", version, N; N x 4 float32
    root/samples/<token>/hits.bin       "SCFH", version, N; N int32 (debug)
    root/samples/<token>/depth.bin      "SCFD", version, H, W; H x W float32
    root/samples/<token>/cam_front.ppm  binary P6, 8-bit
    root/samples/<token>/anns.json      calibration, ego pose, boxes (meters, radians)

Binary payloads are little-endian.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any

import numpy as np

from scafusion.entities.scene import SceneSample
from scafusion.errors import DatasetError
from scafusion.value_objects import CLASS_NAMES, Box3D, CameraCalib, EgoPose, PointCloud

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
POINTS_HEADER = struct.Struct("<4sIQ")
HITS_HEADER = struct.Struct("<4sIQ")
DEPTH_HEADER = struct.Struct("<4sIII")
UNITS = {
    "length": "meters",
    "angle": "radians",
    "depth": "meters along the optical axis",
    "intensity": "[0, 1]",
}


def _write_array(path: Path, header: bytes, payload: np.ndarray) -> None:
    path.write_bytes(header + payload.tobytes())


def _read_payload(
    path: Path, header: struct.Struct, magic: bytes
) -> tuple[tuple[int, ...], bytes]:
    try:
        raw = path.read_bytes()
    except FileNotFoundError as error:
        raise DatasetError(f"{path}: file missing") from error
    if len(raw) < header.size:
        raise DatasetError(f"{path}: header truncated ({len(raw)} bytes)")
    found, version, *dims = header.unpack_from(raw)
    if found != magic:
        raise DatasetError(f"{path}: magic has to be {magic!r} - not {found!r}")
    if version != FORMAT_VERSION:
        raise DatasetError(
            f"{path}: version {version} is not supported (expected {FORMAT_VERSION})"
        )
    return tuple(dims), raw[header.size :]


def write_points(path: Path, cloud: PointCloud) -> None:
    points = cloud.points.astype("<f4")
    header = POINTS_HEADER.pack(b"SCFP", FORMAT_VERSION, points.shape[0])
    _write_array(path, header, points)


def read_points(path: Path, hits_path: Path | None = None) -> PointCloud:
    (count,), payload = _read_payload(path, POINTS_HEADER, b"SCFP")
    if len(payload) != count * 16:
        raise DatasetError(
            f"{path}: field points has {len(payload)} bytes,"
            f" expected {count * 16} for N={count}"
        )
    points = np.frombuffer(payload, dtype="<f4").reshape(count, 4)
    hit_ids = None
    if hits_path is not None and hits_path.exists():
        (hit_count,), hit_payload = _read_payload(hits_path, HITS_HEADER, b"SCFH")
        if hit_count != count or len(hit_payload) != count * 4:
            raise DatasetError(
                f"{hits_path}: field hit_ids does not match {count} points"
            )
        hit_ids = np.frombuffer(hit_payload, dtype="<i4")
    return PointCloud(points, hit_ids=hit_ids)


def write_depth(path: Path, depth: np.ndarray) -> None:
    data = np.ascontiguousarray(depth, dtype="<f4")
    _write_array(path, DEPTH_HEADER.pack(b"SCFD", FORMAT_VERSION, *data.shape), data)


def read_depth(path: Path) -> np.ndarray:
    (height, width), payload = _read_payload(path, DEPTH_HEADER, b"SCFD")
    if len(payload) != height * width * 4:
        raise DatasetError(
            f"{path}: field depth has {len(payload)} bytes,"
            f" expected {height * width * 4}"
        )
    depth = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return depth.astype(np.float32)


def write_ppm(path: Path, image: np.ndarray) -> None:
    height, width, _ = image.shape
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    path.write_bytes(header + np.ascontiguousarray(image, np.uint8).tobytes())


def read_ppm(path: Path) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except FileNotFoundError as error:
        raise DatasetError(f"{path}: file missing") from error
    tokens, offset = [], 0
    while len(tokens) < 4:
        while offset < len(raw) and raw[offset : offset + 1].isspace():
            offset += 1
        start = offset
        while offset < len(raw) and not raw[offset : offset + 1].isspace():
            offset += 1
        if start == offset:
            raise DatasetError(f"{path}: header truncated")
        tokens.append(raw[start:offset])
    offset += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise DatasetError(
            f"{path}: only binary 8-bit P6 is supported,"
            f" got {tokens[0]!r}/{tokens[3]!r}"
        )
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except ValueError as error:
        raise DatasetError(
            f"{path}: image size {tokens[1]!r} x {tokens[2]!r} is not an integer pair"
        ) from error
    if width <= 0 or height <= 0:
        raise DatasetError(
            f"{path}: image size has to be positive - not {width} x {height}"
        )
    pixels = raw[offset:]
    if len(pixels) != width * height * 3:
        raise DatasetError(
            f"{path}: field pixels has {len(pixels)} bytes,"
            f" expected {width * height * 3}"
        )
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3).copy()


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as error:
        raise DatasetError(f"{path}: file missing") from error
    except json.JSONDecodeError as error:
        raise DatasetError(f"{path}: not valid JSON ({error})") from error


def _field(data: dict[str, Any], key: str, path: Path) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise DatasetError(f"{path}: field {key} missing")
    return data[key]


def write_dataset(
    root: str | Path,
    samples: list[SceneSample],
    splits: dict[str, list[str]] | None = None,
) -> Path:
    """Write samples plus meta.json and splits.json; returns the root."""
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    for sample in samples:
        folder = root / "samples" / sample.token
        folder.mkdir(parents=True, exist_ok=True)
        write_points(folder / "points.bin", sample.point_cloud)
        if sample.point_cloud.hit_ids is not None:
            hits = sample.point_cloud.hit_ids.astype("<i4")
            header = HITS_HEADER.pack(b"SCFH", FORMAT_VERSION, hits.shape[0])
            _write_array(folder / "hits.bin", header, hits)
        write_depth(folder / "depth.bin", sample.depth)
        write_ppm(folder / "cam_front.ppm", sample.image)
        anns = {
            "token": sample.token,
            "calib": sample.calib.to_dict(),
            "ego_pose": sample.ego.to_dict(),
            "light_elevation_deg": sample.light_elevation,
            "boxes": [box.to_dict() for box in sample.boxes],
        }
        (folder / "anns.json").write_text(json.dumps(anns, indent=2))
        logger.debug("wrote sample %s", sample.token)
    meta = {
        "version": FORMAT_VERSION,
        "classes": list(CLASS_NAMES),
        "units": UNITS,
        "num_samples": len(samples),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2))
    splits = splits or {"train": [s.token for s in samples], "val": []}
    (root / "splits.json").write_text(json.dumps(splits, indent=2))
    return root


def read_meta(root: str | Path) -> dict[str, Any]:
    """Validated meta.json.

    Raises:
        DatasetError: On a version or class-list mismatch.
    """
    path = Path(root) / "meta.json"
    meta = _read_json(path)
    version = _field(meta, "version", path)
    if version != FORMAT_VERSION:
        raise DatasetError(
            f"{path}: field version is {version}, expected {FORMAT_VERSION}"
        )
    if _field(meta, "classes", path) != list(CLASS_NAMES):
        raise DatasetError(f"{path}: field classes has to be {list(CLASS_NAMES)}")
    return meta


def read_splits(root: str | Path) -> dict[str, list[str]]:
    path = Path(root) / "splits.json"
    splits = _read_json(path)
    if not isinstance(splits, dict):
        raise DatasetError(f"{path}: expected an object of token lists")
    return {name: list(tokens) for name, tokens in splits.items()}


def read_sample(root: str | Path, token: str) -> SceneSample:
    folder = Path(root) / "samples" / token
    anns_path = folder / "anns.json"
    anns = _read_json(anns_path)
    try:
        calib = CameraCalib.from_dict(_field(anns, "calib", anns_path))
        ego = EgoPose.from_dict(_field(anns, "ego_pose", anns_path))
        boxes = tuple(Box3D.from_dict(b) for b in _field(anns, "boxes", anns_path))
    except (KeyError, TypeError, ValueError) as error:
        if isinstance(error, DatasetError):
            raise
        raise DatasetError(f"{anns_path}: malformed field ({error})") from error
    image = read_ppm(folder / "cam_front.ppm")
    depth = read_depth(folder / "depth.bin")
    if image.shape[:2] != depth.shape or depth.shape != (calib.height, calib.width):
        raise DatasetError(
            f"{folder}: image {image.shape[:2]}, depth {depth.shape}"
            " and calib size disagree"
        )
    return SceneSample(
        token=token,
        point_cloud=read_points(folder / "points.bin", folder / "hits.bin"),
        image=image,
        depth=depth,
        calib=calib,
        ego=ego,
        boxes=boxes,
        light_elevation=float(_field(anns, "light_elevation_deg", anns_path)),
    )


def read_dataset(root: str | Path, split: str | None = None) -> list[SceneSample]:
    """Read every sample of a split (all samples when ``split`` is None).

    Raises:
        DatasetError: If the split is unknown or a file is missing or malformed.
    """
    read_meta(root)
    splits = read_splits(root)
    if split is None:
        tokens = sorted({t for tokens in splits.values() for t in tokens})
    elif split not in splits:
        raise DatasetError(f"{Path(root) / 'splits.json'}: field {split} missing")
    else:
        tokens = splits[split]
    return [read_sample(root, token) for token in tokens]
