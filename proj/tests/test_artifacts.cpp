#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rpf/checkpoint.hpp"
#include "rpf/config.hpp"

using namespace rpf;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("artifacts");

namespace {

RunConfig sample_config() {
  RunConfig config;
  config.target_name = "u3";
  config.manifold = make_target("u3")->manifold();
  config.network.architecture = Architecture::mlp;
  config.network.layer_sizes = {8, 8, 1};
  config.network.output_scale = 4.0;
  config.stack.layers = 2;
  config.stack.share_parameters = true;
  config.solver.restart_points = 1;
  config.train.batch_size = 17;
  config.train.steps = 3;
  config.train.seed = 42;
  config.output_dir = "some/dir";
  return config;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("rpf_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int counter() {
    static int c = 0;
    return c++;
  }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

}  // namespace

TEST_CASE("config round trip is the identity") {
  RunConfig config = sample_config();
  nlohmann::json j = run_config_to_json(config);
  RunConfig back = run_config_from_json(j);
  CHECK(back == config);
  CHECK(run_config_to_json(back).dump() == j.dump());

  // custom declarative target round trip
  RunConfig custom;
  custom.custom_target = {
      {"kind", "vmf_sphere"},
      {"manifold", {{"kind", "sphere"}, {"dimension", 2}}},
      {"components",
       {{{"mean_latlon", {0.3, 1.0}}, {"kappa", 5.0}, {"weight", 1.0}}}}};
  custom.manifold = ManifoldKernel::sphere(2);
  custom.network.architecture = Architecture::mlp;
  RunConfig back2 = run_config_from_json(run_config_to_json(custom));
  CHECK(back2 == custom);
  auto target = resolve_target(back2);
  CHECK(target->manifold().is_sphere());
}

TEST_CASE("config errors carry the field path") {
  try {
    run_config_from_json(nlohmann::json{{"network", {{"architecture", "mlp"}}}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "target");
  }
  try {
    nlohmann::json j = run_config_to_json(sample_config());
    j["manifold"]["circumferences"] = {2.0, 2.0};  // u3 lives on a 6x6 torus
    run_config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "manifold");
  }
  try {
    nlohmann::json j = run_config_to_json(sample_config());
    j["network"]["architecture"] = "transformer";
    run_config_from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "network.architecture");
  }
}

TEST_CASE("checkpoint save/load round trip and corruption detection") {
  TempDir dir;
  RunConfig config = sample_config();
  BuiltRun run = build_run(config);
  std::string path = dir.file("model.rpf");
  save_checkpoint(path, config, run.theta);

  LoadedCheckpoint back = load_checkpoint(path);
  CHECK(back.config == config);
  CHECK((back.theta.values() - run.theta.values()).norm() == 0.0);
  CHECK(back.theta.layout().segments.size() ==
        run.theta.layout().segments.size());

  // flip one payload byte: the digest must catch it
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(64);
  char c;
  f.seekg(64);
  f.get(c);
  f.seekp(64);
  f.put(static_cast<char>(c ^ 0x40));
  f.close();
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.rpf")), IoError);
}

TEST_CASE("metrics records have a stable wire format") {
  MetricsRecord r;
  r.step = 120;
  r.kl = 0.25;
  r.ess = 93.5;
  r.mean_logdet = -0.125;
  r.nonconverged_frac = 0.0;
  r.max_grad_psi = 0.5;
  r.max_hess_psi = 1.0 / 3.0;
  std::string line = metrics_record_line(r);
  CHECK(line ==
        "{\"step\":120,\"kl\":0.25,\"ess\":93.5,\"mean_logdet\":-0.125,"
        "\"nonconverged_frac\":0,\"max_grad_psi\":0.5,"
        "\"max_hess_psi\":0.33333333333333331}");
  // parses back as JSON with the exact field set
  auto j = nlohmann::json::parse(line);
  CHECK(j.size() == 7);
  CHECK(j["step"] == 120);

  TempDir dir;
  MetricsWriter writer(dir.file("metrics.jsonl"));
  writer.write(r);
  writer.write(r);
  std::ifstream in(dir.file("metrics.jsonl"));
  std::string l1, l2;
  std::getline(in, l1);
  std::getline(in, l2);
  CHECK(l1 == line);
  CHECK(l2 == line);
}

TEST_CASE("csv exports") {
  TempDir dir;
  DensityGrid grid;
  grid.res1 = 1;
  grid.res2 = 2;
  grid.coords.resize(2, 2);
  grid.coords << 0.5, 0.5, 1.5, 0.5;
  grid.log_q.resize(2);
  grid.log_q << -1.0, -2.0;
  grid.ok = {1, 0};
  grid.quad_weights = Eigen::Vector2d(1.0, 1.0);

  export_density_grid_csv(dir.file("grid.csv"), grid);
  std::ifstream in(dir.file("grid.csv"));
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "coord1,coord2,log_q");
  CHECK(row1 == "0.5,0.5,-1");
  CHECK(row2 == "1.5,0.5,nan");

  export_torus_grid_ppm(dir.file("grid.ppm"), grid);
  CHECK(fs::file_size(dir.file("grid.ppm")) > 10);

  Eigen::MatrixXd coords(1, 2);
  coords << 0.25, 0.75;
  Eigen::VectorXd lq(1);
  lq << -0.5;
  export_samples_csv(dir.file("samples.csv"), coords, lq);
  std::ifstream sin(dir.file("samples.csv"));
  std::getline(sin, header);
  CHECK(header == "coord1,coord2,log_q");

  CHECK_THROWS_AS(
      export_samples_csv("/nonexistent_dir_xyz/out.csv", coords, lq), IoError);
}

TEST_SUITE_END();
