#include "rpf/checkpoint.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

namespace rpf {

namespace {

constexpr char kMagic[] = "RPF1\n";
constexpr std::size_t kMagicLen = 5;

std::uint64_t fnv1a(const unsigned char* data, std::size_t n,
                    std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i)
    h = (h ^ data[i]) * 0x100000001b3ULL;
  return h;
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f64_le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64_le(out, bits);
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config,
                     const ParamVector& theta) {
  nlohmann::json header;
  header["version"] = 1;
  header["config"] = run_config_to_json(config);
  nlohmann::json layout = nlohmann::json::array();
  for (const auto& s : theta.layout().segments)
    layout.push_back({{"name", s.name}, {"size", s.size}});
  header["layout"] = layout;
  header["params"] = theta.size();
  std::string header_str = header.dump();

  std::string payload;
  payload.reserve(kMagicLen + 8 + header_str.size() + 8 * theta.size() + 8);
  payload.append(kMagic, kMagicLen);
  put_u64_le(payload, header_str.size());
  payload.append(header_str);
  for (int i = 0; i < theta.size(); ++i) put_f64_le(payload, theta.values()[i]);
  std::uint64_t digest = fnv1a(
      reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  put_u64_le(payload, digest);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kMagicLen + 16 ||
      std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
    throw IoError("not a checkpoint file: " + path);

  std::uint64_t stored_digest = get_u64_le(bytes.data() + bytes.size() - 8);
  std::uint64_t digest = fnv1a(bytes.data(), bytes.size() - 8);
  if (digest != stored_digest)
    throw IoError("checkpoint digest mismatch (corrupted file): " + path);

  std::size_t off = kMagicLen;
  std::uint64_t header_len = get_u64_le(bytes.data() + off);
  off += 8;
  if (off + header_len + 8 > bytes.size())
    throw IoError("truncated checkpoint: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + off,
                                   bytes.begin() + off + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }
  off += header_len;

  LoadedCheckpoint out;
  out.config = run_config_from_json(header.at("config"));
  std::size_t n = header.at("params").get<std::size_t>();
  if (off + 8 * n + 8 != bytes.size())
    throw IoError("checkpoint payload size mismatch: " + path);
  Eigen::VectorXd values(n);
  for (std::size_t i = 0; i < n; ++i)
    values[i] = get_f64_le(bytes.data() + off + 8 * i);

  BuiltRun run = build_run(out.config);
  if (run.theta.size() != static_cast<int>(n))
    throw IoError("checkpoint parameter count does not match its config");
  out.theta = ParamVector(std::move(values), run.theta.layout_ptr());
  return out;
}

std::string metrics_record_line(const MetricsRecord& r) {
  std::string line = "{\"step\":" + std::to_string(r.step);
  line += ",\"kl\":" + format_double(r.kl);
  line += ",\"ess\":" + format_double(r.ess);
  line += ",\"mean_logdet\":" + format_double(r.mean_logdet);
  line += ",\"nonconverged_frac\":" + format_double(r.nonconverged_frac);
  line += ",\"max_grad_psi\":" + format_double(r.max_grad_psi);
  line += ",\"max_hess_psi\":" + format_double(r.max_hess_psi);
  line += "}";
  return line;
}

MetricsWriter::MetricsWriter(const std::string& path) : path_(path) {
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics file: " + path_);
}

void MetricsWriter::write(const MetricsRecord& record) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to metrics file: " + path_);
  out << metrics_record_line(record) << "\n";
}

void export_density_grid_csv(const std::string& path, const DensityGrid& grid) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write grid export: " + path);
  out << "coord1,coord2,log_q\n";
  for (int i = 0; i < grid.log_q.size(); ++i) {
    out << format_double(grid.coords(i, 0)) << ","
        << format_double(grid.coords(i, 1)) << ","
        << (grid.ok[i] ? format_double(grid.log_q[i]) : "nan") << "\n";
  }
  if (!out) throw IoError("short write on grid export: " + path);
}

void export_samples_csv(const std::string& path, const Eigen::MatrixXd& coords,
                        const Eigen::VectorXd& log_q) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write sample export: " + path);
  for (int c = 0; c < coords.cols(); ++c) out << "coord" << (c + 1) << ",";
  out << "log_q\n";
  for (int i = 0; i < coords.rows(); ++i) {
    for (int c = 0; c < coords.cols(); ++c)
      out << format_double(coords(i, c)) << ",";
    out << format_double(log_q[i]) << "\n";
  }
  if (!out) throw IoError("short write on sample export: " + path);
}

void export_torus_grid_ppm(const std::string& path, const DensityGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write ppm: " + path);
  double lo = 1e300, hi = -1e300;
  for (int i = 0; i < grid.log_q.size(); ++i)
    if (grid.ok[i]) {
      lo = std::min(lo, grid.log_q[i]);
      hi = std::max(hi, grid.log_q[i]);
    }
  if (!(hi > lo)) hi = lo + 1.0;
  out << "P6\n" << grid.res2 << " " << grid.res1 << "\n255\n";
  for (int i = 0; i < grid.res1; ++i)
    for (int j = 0; j < grid.res2; ++j) {
      int idx = i * grid.res2 + j;
      unsigned char rgb[3] = {0, 0, 0};
      if (grid.ok[idx]) {
        double t = (grid.log_q[idx] - lo) / (hi - lo);
        rgb[0] = static_cast<unsigned char>(255.0 * t);
        rgb[1] = static_cast<unsigned char>(64.0 * (1.0 - t));
        rgb[2] = static_cast<unsigned char>(255.0 * (1.0 - t));
      }
      out.write(reinterpret_cast<const char*>(rgb), 3);
    }
  if (!out) throw IoError("short write on ppm: " + path);
}

}  // namespace rpf
