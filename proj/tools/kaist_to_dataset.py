#!/usr/bin/env python3
"""Convert a KAIST Complex Urban sequence into a vigcal dataset directory.

Untested against the real data (none is shipped here); column layouts are
module constants so they can be fixed without touching the logic.

Expected input layout (as distributed):
  sensor_data/xsens_imu.csv   stamp_ns, qx qy qz qw, roll pitch yaw, gx gy gz, ax ay az, mx my mz
  sensor_data/encoder.csv     stamp_ns, left_count, right_count
  global_pose.csv             stamp_ns, 3x4 row-major [R|t] vehicle pose
  image/stereo_left/<stamp_ns>.png

Camera intrinsics and IMU/camera extrinsics come from the command line; read
them off the sequence's calibration folder. Left images are stored
Bayer-encoded; they are demosaiced with OpenCV when it is available.
"""

import argparse
import csv
import math
import pathlib
import sys

import numpy as np

IMU_GYRO_COLS = (8, 9, 10)
IMU_ACC_COLS = (11, 12, 13)
POSE_COLS = range(1, 13)


def stamp(ns):
    return int(ns) * 1e-9


def read_rows(path):
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if row and not row[0].startswith("#"):
                yield row


def rot_to_quat(R):
    w = math.sqrt(max(0.0, 1.0 + R[0, 0] + R[1, 1] + R[2, 2])) / 2.0
    x = math.copysign(math.sqrt(max(0.0, 1.0 + R[0, 0] - R[1, 1] - R[2, 2])) / 2.0, R[2, 1] - R[1, 2])
    y = math.copysign(math.sqrt(max(0.0, 1.0 - R[0, 0] + R[1, 1] - R[2, 2])) / 2.0, R[0, 2] - R[2, 0])
    z = math.copysign(math.sqrt(max(0.0, 1.0 - R[0, 0] - R[1, 1] + R[2, 2])) / 2.0, R[1, 0] - R[0, 1])
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def convert_imu(src, dst, R_bi, t0):
    n = 0
    with open(dst / "imu.csv", "w") as out:
        out.write("t,wx,wy,wz,ax,ay,az\n")
        for row in read_rows(src / "sensor_data" / "xsens_imu.csv"):
            w = R_bi @ np.array([float(row[i]) for i in IMU_GYRO_COLS])
            a = R_bi @ np.array([float(row[i]) for i in IMU_ACC_COLS])
            out.write("%.9f,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n" % (stamp(row[0]) - t0, *w, *a))
            n += 1
    return n


def convert_encoder(src, dst, args, t0):
    # rear-axle speed from the mean of both wheel increments
    prev = None
    n = 0
    with open(dst / "wheel.csv", "w") as out:
        out.write("t,vx\n")
        for row in read_rows(src / "sensor_data" / "encoder.csv"):
            t, left, right = stamp(row[0]), int(row[1]), int(row[2])
            if prev is not None and t > prev[0]:
                dl = (left - prev[1]) * math.pi * args.left_diameter / args.resolution
                dr = (right - prev[2]) * math.pi * args.right_diameter / args.resolution
                out.write("%.9f,%.17g\n" % (t - t0, 0.5 * (dl + dr) / (t - prev[0])))
                n += 1
            prev = (t, left, right)
    return n


def convert_pose(src, dst, t0):
    n = 0
    origin = None
    with open(dst / "gt.csv", "w") as out:
        out.write("t,px,py,pz,qw,qx,qy,qz\n")
        for row in read_rows(src / "global_pose.csv"):
            m = np.array([float(row[i]) for i in POSE_COLS]).reshape(3, 4)
            if origin is None:
                origin = m[:, 3].copy()
            p = m[:, 3] - origin
            q = rot_to_quat(m[:, :3])
            out.write("%.9f,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n" % (stamp(row[0]) - t0, *p, *q))
            n += 1
    return n


def convert_images(src, dst, t0, every):
    from PIL import Image

    try:
        import cv2
    except ImportError:
        cv2 = None
    files = sorted((src / "image" / "stereo_left").glob("*.png"), key=lambda p: int(p.stem))
    (dst / "frames").mkdir(parents=True, exist_ok=True)
    n = 0
    with open(dst / "frames.csv", "w") as out:
        out.write("t,file\n")
        for k, f in enumerate(files[::every]):
            if cv2 is not None:
                raw = cv2.imread(str(f), cv2.IMREAD_UNCHANGED)
                img = cv2.cvtColor(cv2.cvtColor(raw, cv2.COLOR_BAYER_RG2BGR), cv2.COLOR_BGR2GRAY)
                Image.fromarray(img).save(dst / "frames" / ("%06d.pgm" % k))
            else:
                Image.open(f).convert("L").save(dst / "frames" / ("%06d.pgm" % k))
            out.write("%.9f,%06d.pgm\n" % (stamp(f.stem) - t0, k))
            n += 1
    return n


def write_calib(dst, args):
    with open(dst / "calib.txt", "w") as out:
        out.write("intrinsics: %s\n" % " ".join(map(repr, args.intrinsics)))
        out.write("distortion: %s\n" % " ".join(map(repr, args.distortion)))
        out.write("resolution: %d %d\n" % tuple(args.image_size))
        out.write("R_CB: %s\n" % " ".join(map(repr, args.r_cb)))
        out.write("lever: %s\n" % " ".join(map(repr, args.lever)))
        out.write("side_slip_gradient: %r\n" % args.side_slip_gradient)
        out.write("imu_rate: %r\n" % args.imu_rate)
        out.write("camera_rate: %r\n" % (args.camera_rate / args.every))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("sequence", type=pathlib.Path, help="unpacked KAIST sequence directory, e.g. urban39")
    ap.add_argument("out", type=pathlib.Path, help="dataset directory to write")
    ap.add_argument("--intrinsics", type=float, nargs=4, required=True, metavar=("FX", "FY", "CX", "CY"))
    ap.add_argument("--distortion", type=float, nargs=2, default=(0.0, 0.0), metavar=("K1", "K2"))
    ap.add_argument("--image-size", type=int, nargs=2, default=(1280, 560), metavar=("W", "H"))
    ap.add_argument("--r-cb", type=float, nargs=9, required=True, help="body to camera rotation, row-major")
    ap.add_argument("--lever", type=float, nargs=3, required=True, help="camera position in the body frame [m]")
    ap.add_argument("--r-bi", type=float, nargs=9, default=(1, 0, 0, 0, 1, 0, 0, 0, 1),
                    help="IMU to body rotation, row-major")
    ap.add_argument("--left-diameter", type=float, required=True, help="left wheel diameter [m]")
    ap.add_argument("--right-diameter", type=float, required=True, help="right wheel diameter [m]")
    ap.add_argument("--resolution", type=float, default=4096.0, help="encoder counts per revolution")
    ap.add_argument("--side-slip-gradient", type=float, default=0.0024)
    ap.add_argument("--imu-rate", type=float, default=100.0)
    ap.add_argument("--camera-rate", type=float, default=10.0)
    ap.add_argument("--every", type=int, default=1, help="keep every n-th image")
    ap.add_argument("--no-images", action="store_true", help="wheel-IMU only dataset")
    args = ap.parse_args()

    src, dst = args.sequence, args.out
    if not (src / "sensor_data" / "xsens_imu.csv").exists():
        sys.exit("%s: sensor_data/xsens_imu.csv not found" % src)
    dst.mkdir(parents=True, exist_ok=True)
    t0 = stamp(next(read_rows(src / "sensor_data" / "xsens_imu.csv"))[0])
    R_bi = np.array(args.r_bi).reshape(3, 3)

    write_calib(dst, args)
    print("imu samples:   ", convert_imu(src, dst, R_bi, t0))
    print("wheel samples: ", convert_encoder(src, dst, args, t0))
    if (src / "global_pose.csv").exists():
        print("gt poses:      ", convert_pose(src, dst, t0))
    if not args.no_images:
        print("frames:        ", convert_images(src, dst, t0, args.every))


if __name__ == "__main__":
    main()
