"""Regenerates the KITTI-format fixtures and the reference projection.

The reference uses the raw KITTI camera model
    y = P_rect_02 @ R_rect_00 @ [R | T] @ x
with no simplification, so it is independent of the library's pinhole path.
"""
import json
import pathlib

import numpy as np

HERE = pathlib.Path(__file__).parent


def read_calib(path):
    out = {}
    for line in path.read_text().splitlines():
        key, _, rest = line.partition(":")
        try:
            out[key] = np.array([float(v) for v in rest.split()])
        except ValueError:
            pass
    return out


def scan(rng, n):
    # Ground, a wall ahead-left, scattered clutter, and points behind the car.
    ground = np.c_[rng.uniform(4, 60, n // 2), rng.uniform(-15, 15, n // 2), np.full(n // 2, -1.73)]
    wall = np.c_[rng.uniform(6, 30, n // 4), np.full(n // 4, 7.5), rng.uniform(-1.7, 2.5, n // 4)]
    clutter = np.c_[rng.uniform(2, 40, n // 8), rng.uniform(-10, 10, n // 8), rng.uniform(-1.5, 1.5, n // 8)]
    rest = n - len(ground) - len(wall) - len(clutter)
    behind = np.c_[rng.uniform(-30, -1, rest), rng.uniform(-10, 10, rest), rng.uniform(-1.7, 1.0, rest)]
    pts = np.vstack([ground, wall, clutter, behind])
    inten = rng.uniform(0, 1, (n, 1))
    return np.hstack([pts, inten]).astype(np.float32)


def main():
    rng = np.random.default_rng(20110926)
    cloud = scan(rng, 2000)
    drive = HERE / "2011_09_26_drive_0001_sync" / "velodyne_points" / "data"
    cloud.tofile(drive / "0000000000.bin")

    cam = read_calib(HERE / "calib_cam_to_cam.txt")
    velo = read_calib(HERE / "calib_velo_to_cam.txt")
    P = cam["P_rect_02"].reshape(3, 4)
    R0 = np.eye(4)
    R0[:3, :3] = cam["R_rect_00"].reshape(3, 3)
    Tv = np.eye(4)
    Tv[:3, :3] = velo["R"].reshape(3, 3)
    Tv[:3, 3] = velo["T"]
    x = np.c_[cloud[:, :3].astype(np.float64), np.ones(len(cloud))]
    y = (P @ R0 @ Tv @ x.T).T
    w, h = cam["S_rect_02"]
    records = []
    for i, (a, b, z) in enumerate(y):
        if z <= 0.1:
            continue
        u, v = a / z, b / z
        records.append({"index": i, "u": u, "v": v, "depth": z,
                        "in_image": bool(0 <= round(u) < w and 0 <= round(v) < h)})
    ref = {"point_count": len(cloud), "projected": records}
    (HERE / "reference_projection_0000000000.json").write_text(json.dumps(ref, indent=1) + "\n")

    corrupt = HERE / "corrupt"
    two = np.array([[1.0, 2.0, 3.0, 0.5], [-4.0, 5.5, -6.25, 1.0]], dtype=np.float32)
    two.tofile(corrupt / "two_records.bin")
    (corrupt / "empty.bin").write_bytes(b"")
    (corrupt / "truncated.bin").write_bytes(two.tobytes()[:20])


if __name__ == "__main__":
    main()
