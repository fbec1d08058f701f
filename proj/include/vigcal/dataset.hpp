#pragma once

// Dataset directory format shared by simulated and recorded runs.
//
//   imu.csv        t,wx,wy,wz,ax,ay,az
//   wheel.csv      t,vx
//   bearings.csv   t,id,bx,by,bz          (bearing mode)
//   frames.csv     t,file                 (image mode, files under frames/)
//   calib.txt      key: values
//   gt.csv         t,px,py,pz,qw,qx,qy,qz (optional)

#include <vigcal/camera.hpp>
#include <vigcal/dynamics.hpp>
#include <vigcal/errors.hpp>
#include <vigcal/features.hpp>
#include <vigcal/geom.hpp>
#include <vigcal/image.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace vigcal {

struct WheelSample {
  double t = 0.0;
  double v_x = 0.0;
};

struct ObservedBearing {
  long id = -1;
  Bearing bearing;
};

struct BearingFrame {
  double t = 0.0;
  std::vector<ObservedBearing> obs;
};

struct ImageFrame {
  double t = 0.0;
  std::string file;                    // relative to the frames/ directory
  std::shared_ptr<const Image> image;  // loaded lazily when empty
};

struct PoseSample {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  UnitQuaternion q = UnitQuaternion::Identity();
};

struct Calibration {
  CameraIntrinsics intr;
  CameraExtrinsics ext = CameraExtrinsics::forward_looking(Vec3(1.5, 0.0, 1.2));
  double side_slip_gradient = 0.0024;
  double imu_rate = 100.0;
  double camera_rate = 10.0;
};

struct Dataset {
  Calibration calib;
  std::vector<ImuSample> imu;
  std::vector<WheelSample> wheel;
  std::vector<BearingFrame> bearing_frames;
  std::vector<ImageFrame> image_frames;
  std::vector<PoseSample> gt;
  std::filesystem::path root;  // empty for in-memory datasets

  bool image_mode() const { return !image_frames.empty(); }
};

// --- low-level helpers ----------------------------------------------------------

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Writes via a temporary file in the same directory, then renames.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("rename failed for " + path.string() + ": " + ec.message());
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) {
    for (size_t i = 0; i < header.size(); ++i) buf_ << (i ? "," : "") << header[i];
    buf_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... vals) {
    bool first = true;
    ((buf_ << (first ? "" : ",") << cell(vals), first = false), ...);
    buf_ << '\n';
  }

  std::string str() const { return buf_.str(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }

  std::ostringstream buf_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  CsvTable table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    if (table.header.empty()) {
      table.header = split_csv_line(line);
      if (table.header != expected_header) {
        std::string want;
        for (size_t i = 0; i < expected_header.size(); ++i) want += (i ? "," : "") + expected_header[i];
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": unexpected header, want " + want);
      }
      continue;
    }
    auto cells = split_csv_line(line);
    if (cells.size() != expected_header.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(expected_header.size()) + " columns, got " + std::to_string(cells.size()));
    }
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(lineno);
  }
  if (table.header.empty()) throw DataError(path.string() + ": empty file");
  return table;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": not a number: '" + s + "'");
  }
}

inline std::string where(const std::filesystem::path& p, const CsvTable& t, size_t row) {
  return p.string() + ":" + std::to_string(t.line_numbers[row]);
}

inline void require_increasing(double prev, double t, const std::string& loc) {
  if (!(t > prev)) throw DataError(loc + ": timestamps must be strictly increasing");
}

// --- readers ----------------------------------------------------------------------

inline std::vector<ImuSample> read_imu_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"t", "wx", "wy", "wz", "ax", "ay", "az"});
  std::vector<ImuSample> out;
  out.reserve(t.rows.size());
  double prev = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const std::string loc = where(path, t, i);
    double v[7];
    for (int k = 0; k < 7; ++k) v[k] = parse_double(t.rows[i][k], loc);
    require_increasing(prev, v[0], loc);
    prev = v[0];
    out.push_back(ImuSample{v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
  }
  return out;
}

inline std::vector<WheelSample> read_wheel_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"t", "vx"});
  std::vector<WheelSample> out;
  double prev = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const std::string loc = where(path, t, i);
    WheelSample w{parse_double(t.rows[i][0], loc), parse_double(t.rows[i][1], loc)};
    require_increasing(prev, w.t, loc);
    prev = w.t;
    out.push_back(w);
  }
  return out;
}

inline std::vector<BearingFrame> read_bearings_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"t", "id", "bx", "by", "bz"});
  std::vector<BearingFrame> out;
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const std::string loc = where(path, t, i);
    const double ts = parse_double(t.rows[i][0], loc);
    const double id = parse_double(t.rows[i][1], loc);
    const Vec3 b(parse_double(t.rows[i][2], loc), parse_double(t.rows[i][3], loc),
                 parse_double(t.rows[i][4], loc));
    if (!(b.norm() > 1e-9)) throw DataError(loc + ": zero bearing vector");
    if (out.empty() || ts != out.back().t) {
      if (!out.empty() && ts < out.back().t) throw DataError(loc + ": timestamps must not decrease");
      out.push_back(BearingFrame{ts, {}});
    }
    out.back().obs.push_back(ObservedBearing{static_cast<long>(id), Bearing::from_direction(b)});
  }
  return out;
}

inline std::vector<ImageFrame> read_frames_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"t", "file"});
  std::vector<ImageFrame> out;
  double prev = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const std::string loc = where(path, t, i);
    ImageFrame f;
    f.t = parse_double(t.rows[i][0], loc);
    f.file = t.rows[i][1];
    require_increasing(prev, f.t, loc);
    prev = f.t;
    out.push_back(std::move(f));
  }
  return out;
}

inline std::vector<PoseSample> read_pose_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"t", "px", "py", "pz", "qw", "qx", "qy", "qz"});
  std::vector<PoseSample> out;
  double prev = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < t.rows.size(); ++i) {
    const std::string loc = where(path, t, i);
    double v[8];
    for (int k = 0; k < 8; ++k) v[k] = parse_double(t.rows[i][k], loc);
    require_increasing(prev, v[0], loc);
    prev = v[0];
    UnitQuaternion q(v[4], v[5], v[6], v[7]);
    if (!(q.norm() > 1e-9)) throw DataError(loc + ": zero quaternion");
    out.push_back(PoseSample{v[0], Vec3(v[1], v[2], v[3]), q.normalized()});
  }
  return out;
}

inline std::map<std::string, std::vector<double>> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  std::map<std::string, std::vector<double>> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto colon = line.find(':');
    const std::string loc = path.string() + ":" + std::to_string(lineno);
    if (colon == std::string::npos) throw DataError(loc + ": expected 'key: values'");
    std::string key = split_csv_line(line.substr(0, colon))[0];
    std::istringstream vals(line.substr(colon + 1));
    std::vector<double> v;
    std::string tok;
    while (vals >> tok) v.push_back(parse_double(tok, loc));
    kv[key] = std::move(v);
  }
  return kv;
}

inline Calibration read_calibration(const std::filesystem::path& path) {
  const auto kv = read_key_values(path);
  Calibration c;
  auto get = [&](const std::string& key, size_t n) -> const std::vector<double>* {
    auto it = kv.find(key);
    if (it == kv.end()) return nullptr;
    if (it->second.size() != n) {
      throw DataError(path.string() + ": key '" + key + "' expects " + std::to_string(n) + " values");
    }
    return &it->second;
  };
  auto need = [&](const std::string& key, size_t n) {
    const auto* v = get(key, n);
    if (!v) throw DataError(path.string() + ": missing key '" + key + "'");
    return v;
  };
  const auto* intr = need("intrinsics", 4);
  c.intr.fx = (*intr)[0];
  c.intr.fy = (*intr)[1];
  c.intr.cx = (*intr)[2];
  c.intr.cy = (*intr)[3];
  if (const auto* d = get("distortion", 2)) {
    c.intr.k1 = (*d)[0];
    c.intr.k2 = (*d)[1];
  }
  const auto* res = need("resolution", 2);
  c.intr.width = static_cast<int>((*res)[0]);
  c.intr.height = static_cast<int>((*res)[1]);
  if (!c.intr.valid()) throw DataError(path.string() + ": invalid intrinsics");
  if (const auto* r = get("R_CB", 9)) {
    for (int i = 0; i < 9; ++i) c.ext.R_CB(i / 3, i % 3) = (*r)[i];
    const double orth = (c.ext.R_CB * c.ext.R_CB.transpose() - Mat3::Identity()).norm();
    if (orth > 1e-6 || c.ext.R_CB.determinant() < 0) throw DataError(path.string() + ": R_CB is not a rotation");
  }
  if (const auto* l = get("lever", 3)) c.ext.lever = Vec3((*l)[0], (*l)[1], (*l)[2]);
  if (const auto* s = get("side_slip_gradient", 1)) c.side_slip_gradient = (*s)[0];
  if (const auto* r = get("imu_rate", 1)) c.imu_rate = (*r)[0];
  if (const auto* r = get("camera_rate", 1)) c.camera_rate = (*r)[0];
  return c;
}

inline std::string calibration_text(const Calibration& c) {
  std::ostringstream o;
  o.precision(17);
  o << "intrinsics: " << c.intr.fx << ' ' << c.intr.fy << ' ' << c.intr.cx << ' ' << c.intr.cy << '\n';
  o << "distortion: " << c.intr.k1 << ' ' << c.intr.k2 << '\n';
  o << "resolution: " << c.intr.width << ' ' << c.intr.height << '\n';
  o << "R_CB:";
  for (int i = 0; i < 9; ++i) o << ' ' << c.ext.R_CB(i / 3, i % 3);
  o << '\n';
  o << "lever: " << c.ext.lever.x() << ' ' << c.ext.lever.y() << ' ' << c.ext.lever.z() << '\n';
  o << "side_slip_gradient: " << c.side_slip_gradient << '\n';
  o << "imu_rate: " << c.imu_rate << '\n';
  o << "camera_rate: " << c.camera_rate << '\n';
  return o.str();
}

inline std::string pose_csv(const std::vector<PoseSample>& poses) {
  CsvWriter w({"t", "px", "py", "pz", "qw", "qx", "qy", "qz"});
  for (const auto& p : poses) {
    w.row(p.t, p.p.x(), p.p.y(), p.p.z(), p.q.w(), p.q.x(), p.q.y(), p.q.z());
  }
  return w.str();
}

// Loads a dataset directory; images stay on disk until the filter needs them.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  Dataset d;
  d.root = dir;
  d.calib = read_calibration(dir / "calib.txt");
  d.imu = read_imu_csv(dir / "imu.csv");
  d.wheel = read_wheel_csv(dir / "wheel.csv");
  if (std::filesystem::exists(dir / "frames.csv")) {
    d.image_frames = read_frames_csv(dir / "frames.csv");
  } else if (std::filesystem::exists(dir / "bearings.csv")) {
    d.bearing_frames = read_bearings_csv(dir / "bearings.csv");
  }
  if (std::filesystem::exists(dir / "gt.csv")) d.gt = read_pose_csv(dir / "gt.csv");
  if (d.imu.size() < 2) throw DataError("imu.csv: need at least two samples");
  if (d.wheel.empty()) throw DataError("wheel.csv: no samples");
  return d;
}

inline std::shared_ptr<const Image> frame_image(const Dataset& d, const ImageFrame& f) {
  if (f.image) return f.image;
  return std::make_shared<const Image>(read_pgm((d.root / "frames" / f.file).string()));
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "calib.txt", calibration_text(d.calib));
  {
    CsvWriter w({"t", "wx", "wy", "wz", "ax", "ay", "az"});
    for (const auto& s : d.imu)
      w.row(s.t, s.omega.x(), s.omega.y(), s.omega.z(), s.accel.x(), s.accel.y(), s.accel.z());
    write_file_atomic(dir / "imu.csv", w.str());
  }
  {
    CsvWriter w({"t", "vx"});
    for (const auto& s : d.wheel) w.row(s.t, s.v_x);
    write_file_atomic(dir / "wheel.csv", w.str());
  }
  if (!d.bearing_frames.empty()) {
    CsvWriter w({"t", "id", "bx", "by", "bz"});
    for (const auto& f : d.bearing_frames) {
      for (const auto& o : f.obs) {
        const Vec3 b = o.bearing.direction();
        w.row(f.t, o.id, b.x(), b.y(), b.z());
      }
    }
    write_file_atomic(dir / "bearings.csv", w.str());
  }
  if (!d.image_frames.empty()) {
    CsvWriter w({"t", "file"});
    for (const auto& f : d.image_frames) {
      if (!f.image) throw DataError("save_dataset: image frame without pixels");
      const std::filesystem::path p = dir / "frames" / f.file;
      std::filesystem::create_directories(p.parent_path());
      const std::filesystem::path tmp = p.string() + ".tmp";
      write_pgm(tmp.string(), *f.image);
      std::filesystem::rename(tmp, p);
      w.row(f.t, f.file);
    }
    write_file_atomic(dir / "frames.csv", w.str());
  }
  if (!d.gt.empty()) write_file_atomic(dir / "gt.csv", pose_csv(d.gt));
}

}  // namespace vigcal
