#pragma once

// Run artifacts: binary checkpoints (versioned header + little-endian 64-bit
// parameter payload + integrity digest), line-delimited metrics records and
// CSV / portable-pixmap exports.

#include <string>

#include "rpf/config.hpp"
#include "rpf/metrics.hpp"
#include "rpf/training.hpp"

namespace rpf {

void save_checkpoint(const std::string& path, const RunConfig& config,
                     const ParamVector& theta);

struct LoadedCheckpoint {
  RunConfig config;
  ParamVector theta;
};

// Verifies magic and digest; throws IoError on corruption.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Appends one JSON record per eval; formatting is deterministic so equal
// runs produce byte-identical files.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write(const MetricsRecord& record);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

std::string metrics_record_line(const MetricsRecord& record);

void export_density_grid_csv(const std::string& path, const DensityGrid& grid);
void export_samples_csv(const std::string& path, const Eigen::MatrixXd& coords,
                        const Eigen::VectorXd& log_q);
// Simple heat-map render of a torus grid.
void export_torus_grid_ppm(const std::string& path, const DensityGrid& grid);

}  // namespace rpf
