#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "semcom/error.hpp"
#include "semcom/guidance.hpp"
#include "semcom/harness.hpp"

namespace fs = std::filesystem;
using namespace semcom;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool need_config) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config file");
  if (need_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--out-dir", c.out_dir, "output directory (SEMCOM_OUT_DIR wins when set)");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress messages");
}

harness::ExperimentConfig resolve(const Common& c) {
  ConfigFile file = c.config.empty() ? ConfigFile::parse("") : ConfigFile::load(c.config);
  harness::ExperimentConfig cfg = harness::experiment_from_config(file);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  if (const char* env = std::getenv("SEMCOM_OUT_DIR"); env && *env) cfg.out_dir = env;
  cfg.validate();
  return cfg;
}

harness::ProgressFn progress_of(const Common& c) {
  if (c.quiet) return {};
  return [](const std::string& msg) { std::cerr << "[semcom] " << msg << '\n'; };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Importance-aware and generative semantic communication simulator"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset in the phrase-region directory layout");
  add_common(gen, common, false);
  int gen_n = -1;
  gen->add_option("-n,--count", gen_n, "number of scenes (default: train_size + test_size)")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "train every model the experiment grid needs");
  add_common(train, common, true);
  auto* eval = app.add_subcommand("eval", "evaluate the grid from existing checkpoints");
  add_common(eval, common, true);
  auto* sweep = app.add_subcommand("sweep", "train missing models, evaluate the grid and write reports");
  add_common(sweep, common, true);

  auto* report = app.add_subcommand("report", "rebuild metrics.csv and table1.md from stored metrics.json");
  std::string report_in;
  report->add_option("--in", report_in, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* stub = app.add_subcommand("serve-guidance-stub", "serve heatmaps over HTTP for the external backend");
  std::string stub_host = "127.0.0.1";
  int stub_port = 8765;
  double stub_constant = 0.5;
  bool stub_segment = false;
  stub->add_option("--host", stub_host, "bind address");
  stub->add_option("--port", stub_port, "port")->check(CLI::Range(0, 65535));
  stub->add_option("--constant", stub_constant, "constant heatmap value")->check(CLI::Range(0.0, 1.0));
  stub->add_flag("--segment", stub_segment, "answer with the synthetic colour/shape segmenter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(common);
      const auto out = cfg.out_dir;
      harness::DatasetSpec spec = cfg.dataset;
      spec.kind = harness::DatasetKind::SyntheticShapes;
      if (gen_n > 0) {
        spec.test_size = std::max(1, gen_n / 10);
        spec.train_size = std::max(1, gen_n - spec.test_size);
      }
      const auto data = harness::load_dataset(spec, cfg.seed);
      harness::write_dataset_dir(out / "train", data.train);
      harness::write_dataset_dir(out / "test", data.test);
      std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to "
                << out.string() << '\n';
    } else if (*train) {
      const auto cfg = resolve(common);
      harness::prepare_models(cfg, harness::load_dataset(cfg.dataset, harness::dataset_seed(cfg)), progress_of(common));
      std::cout << "checkpoints in " << (cfg.out_dir / "checkpoints").string() << '\n';
    } else if (*eval) {
      auto cfg = resolve(common);
      cfg.train = false;
      const auto data = harness::load_dataset(cfg.dataset, harness::dataset_seed(cfg));
      const auto result = harness::evaluate_grid(cfg, data, progress_of(common));
      harness::write_outputs(cfg, result);
      std::cout << harness::table1_markdown([&] {
        std::vector<metrics::MetricReport> rows;
        for (const auto& c : result.cells) rows.push_back(c.report);
        return rows;
      }());
    } else if (*sweep) {
      const auto cfg = resolve(common);
      const auto result = harness::run_grid(cfg, progress_of(common));
      std::vector<metrics::MetricReport> rows;
      for (const auto& c : result.cells) rows.push_back(c.report);
      std::cout << harness::table1_markdown(rows);
      std::cout << "reports in " << cfg.out_dir.string() << '\n';
    } else if (*report) {
      harness::regenerate_reports(report_in);
      std::cout << "regenerated reports in " << report_in << '\n';
    } else if (*stub) {
      guidance::StubServer server(stub_segment ? std::nullopt : std::optional<double>(stub_constant));
      std::cerr << "[semcom] serving heatmaps on " << stub_host << ':' << stub_port << '\n';
      server.run(stub_host, stub_port);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == Errc::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
