#pragma once

#include "l2gmom/backtest.hpp"
#include "l2gmom/data.hpp"
#include "l2gmom/features.hpp"
#include "l2gmom/gradcheck.hpp"
#include "l2gmom/model.hpp"
#include "l2gmom/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace l2gmom::cli {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "L2GMOM_OUTPUT_ROOT";

enum ExitCode : int { kOk = 0, kValidation = 1, kNumeric = 2, kIo = 3 };

/// How the walk-forward windows are generated.
struct PlanSpec {
  std::string type = "expanding";  // expanding | yearly | explicit
  int initial_train_days = 1750;
  int test_days = 1250;
  int max_windows = 0;
  int first_test_year = 2000;
  int test_years = 5;
  double valid_fraction = 0.1;
  training::WalkForwardPlan windows;  // explicit plans only

  training::WalkForwardPlan build(const std::vector<Date>& dates) const;
};

struct BacktestOptions {
  double sigma_tgt = backtest::kSigmaTarget;
  std::vector<double> cost_levels_bps{backtest::kCostLevelsBps.begin(), backtest::kCostLevelsBps.end()};
  backtest::CostVolatility cost_volatility = backtest::CostVolatility::asset;
  bool rolling_rescale = false;  // ex-ante rescaling instead of whole-period
};

/// A fully resolved run configuration. Exactly one data source is set.
struct RunConfig {
  std::optional<fs::path> csv;
  std::optional<data::SyntheticSpec> synthetic;
  data::IngestConfig ingest;
  features::FeatureConfig features;
  training::TrainConfig train;
  std::vector<model::ModelKind> strategies;
  PlanSpec plan;
  BacktestOptions backtest;
  gradcheck::GradcheckConfig gradcheck;
  std::optional<fs::path> export_checkpoint;
  std::vector<std::string> export_dates;
  fs::path output_dir = "l2gmom_out";
  std::uint64_t seed = 0;

  nlohmann::json source;  // the merged JSON document this was built from
};

/// Defaults as a JSON document; the schema accepted by parse_config.
nlohmann::json default_config();

/// Applies `a.b.c=value` overrides; value is parsed as JSON when possible,
/// otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Merges the document onto the defaults and validates it. Relative output
/// directories resolve against $L2GMOM_OUTPUT_ROOT when it is set.
RunConfig parse_config(const nlohmann::json& doc);

RunConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides);

/// Exclusive ownership of an output directory for the lifetime of the object.
class OutputLock {
public:
  explicit OutputLock(const fs::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

private:
  fs::path path_;
};

struct CommandResult {
  std::vector<fs::path> outputs;
  nlohmann::json summary;
};

/// Loads or generates the price panel named by the config.
data::PricePanel load_prices(const RunConfig& cfg);

CommandResult cmd_synth(const RunConfig& cfg, bool force);
CommandResult cmd_features(const RunConfig& cfg, bool force);
CommandResult cmd_backtest(const RunConfig& cfg, bool force);
CommandResult cmd_export_graphs(const RunConfig& cfg, bool force);
CommandResult cmd_gradcheck(const RunConfig& cfg, bool force);

/// Edge list of a normalized graph over every panel asset; assets missing
/// from `assets` have no incident edges.
nlohmann::json graph_snapshot(const Matrix& graph_norm, const std::vector<Eigen::Index>& assets,
                              const std::vector<std::string>& tickers, Date date, const std::string& checkpoint_id);

/// Command-line entry point; returns the process exit code.
int run(int argc, char** argv);

}  // namespace l2gmom::cli
