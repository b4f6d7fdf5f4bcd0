#include "l2gmom/cli.hpp"

#include "l2gmom/errors.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <unistd.h>

namespace l2gmom::cli {

using model::ModelKind;

namespace {

const std::vector<ModelKind> kAllStrategies{ModelKind::long_only, ModelKind::macd,   ModelKind::linreg,
                                            ModelKind::glinreg,   ModelKind::l2gmom, ModelKind::l2gmom_sr};

// Keys whose values are free-form documents validated by their own parser.
const std::set<std::string> kOpenKeys{"data.synthetic", "plan.windows", "export.checkpoint", "data.csv"};

void check_keys(const nlohmann::json& user, const nlohmann::json& defaults, const std::string& prefix) {
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
    if (kOpenKeys.count(path)) continue;
    const auto& d = defaults.at(key);
    if (d.is_object()) {
      if (!value.is_object()) throw ValidationError("config: '" + path + "' must be an object");
      check_keys(value, d, path);
    }
  }
}

void merge(nlohmann::json& base, const nlohmann::json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) merge(base[key], value);
    else base[key] = value;
  }
}

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << content;
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void refuse_overwrite(const std::vector<fs::path>& targets, bool force) {
  if (force) return;
  for (const auto& p : targets)
    if (fs::exists(p)) throw IoError("refusing to overwrite " + p.string() + " (pass --force)");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool is_learned(ModelKind k) {
  return k == ModelKind::linreg || k == ModelKind::glinreg || k == ModelKind::l2gmom || k == ModelKind::l2gmom_sr;
}

// Runs a command body inside the output directory lock and records a
// manifest whatever the outcome.
template <class Body>
CommandResult with_manifest(const std::string& command, const RunConfig& cfg, Body&& body) {
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.output_dir.string() + ": " + ec.message());
  OutputLock lock(cfg.output_dir);
  nlohmann::json manifest{{"command", command}, {"started_at", now_iso()}, {"config", cfg.source}};
  CommandResult result;
  try {
    result = body();
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    manifest["finished_at"] = now_iso();
    nlohmann::json done = nlohmann::json::array();
    for (const auto& p : result.outputs) done.push_back(p.string());
    manifest["completed_outputs"] = done;
    try {
      write_file(cfg.output_dir / "run_manifest.json", manifest.dump(2) + "\n");
    } catch (const std::exception&) {
    }
    throw;
  }
  manifest["status"] = "ok";
  manifest["finished_at"] = now_iso();
  nlohmann::json outs = nlohmann::json::array();
  for (const auto& p : result.outputs) outs.push_back(fs::relative(p, cfg.output_dir).string());
  manifest["outputs"] = outs;
  manifest["summary"] = result.summary;
  write_file(cfg.output_dir / "run_manifest.json", manifest.dump(2) + "\n");
  return result;
}

}  // namespace

// ------------------------------------------------------------------- config

training::WalkForwardPlan PlanSpec::build(const std::vector<Date>& dates) const {
  training::WalkForwardPlan plan;
  if (type == "expanding") plan = training::expanding_plan(dates, initial_train_days, test_days, valid_fraction, max_windows);
  else if (type == "yearly") plan = training::yearly_plan(dates, first_test_year, test_years, valid_fraction);
  else if (type == "explicit") plan = windows;
  else throw ValidationError("plan.type must be expanding, yearly or explicit, got '" + type + "'");
  plan.validate(dates);
  return plan;
}

nlohmann::json default_config() {
  const features::FeatureConfig f;
  nlohmann::json strategies = nlohmann::json::array();
  for (auto k : kAllStrategies) strategies.push_back(model::to_string(k));
  auto train = training::to_json(training::TrainConfig{});
  train.erase("solver_max_iters");
  train.erase("solver_tol");
  train.erase("solver_gamma");
  const graph::SolverConfig solver;
  return {
      {"seed", 0},
      {"data", {{"csv", nullptr}, {"delimiter", ","}, {"synthetic", nullptr}}},
      {"features",
       {{"vol_span", f.vol.span_days},
        {"vol_min_periods", f.vol.min_periods},
        {"vol_floor", f.vol.vol_floor},
        {"price_std_window", f.price_std_window},
        {"macd_std_window", f.macd_std_window},
        {"std_floor", f.std_floor},
        {"winsorize", f.winsorize},
        {"winsor_half_life", f.winsor_half_life},
        {"winsor_sigmas", f.winsor_sigmas},
        {"lookback", f.lookback}}},
      {"solver", {{"max_iters", solver.max_iters}, {"tol", solver.tol}, {"gamma", solver.gamma}}},
      {"train", train},
      {"strategies", strategies},
      {"plan",
       {{"type", "expanding"},
        {"initial_train_days", 1750},
        {"test_days", 1250},
        {"max_windows", 0},
        {"first_test_year", 2000},
        {"test_years", 5},
        {"valid_fraction", 0.1},
        {"windows", nlohmann::json::array()}}},
      {"backtest",
       {{"sigma_tgt", backtest::kSigmaTarget},
        {"cost_levels_bps", std::vector<double>(backtest::kCostLevelsBps.begin(), backtest::kCostLevelsBps.end())},
        {"cost_volatility", "asset"},
        {"rescale", "ex_post"}}},
      {"gradcheck", gradcheck::to_json(gradcheck::GradcheckConfig{})},
      {"export", {{"checkpoint", nullptr}, {"dates", nlohmann::json::array()}}},
      {"output_dir", "l2gmom_out"},
  };
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig parse_config(const nlohmann::json& user) {
  if (!user.is_object()) throw ValidationError("config must be a JSON object");
  const auto defaults = default_config();
  check_keys(user, defaults, "");
  nlohmann::json doc = defaults;
  merge(doc, user);

  RunConfig cfg;
  cfg.source = doc;
  try {
    cfg.seed = doc.at("seed").get<std::uint64_t>();

    const auto& data = doc.at("data");
    const bool has_csv = !data.at("csv").is_null();
    const bool has_synth = !data.at("synthetic").is_null();
    if (has_csv && has_synth) throw ValidationError("config: data.csv and data.synthetic are mutually exclusive");
    const auto delim = data.at("delimiter").get<std::string>();
    if (delim.size() != 1) throw ValidationError("config: data.delimiter must be a single character");
    cfg.ingest.delimiter = delim[0];
    if (has_csv) {
      cfg.csv = fs::path(data.at("csv").get<std::string>());
      if (!fs::exists(*cfg.csv)) throw IoError("data.csv: no such file " + cfg.csv->string());
    }
    if (has_synth) {
      auto s = data.at("synthetic");
      if (!s.is_object()) throw ValidationError("config: data.synthetic must be an object");
      if (!s.contains("seed")) s["seed"] = cfg.seed;
      cfg.synthetic = data::synthetic_spec_from_json(s);
    }

    const auto& f = doc.at("features");
    cfg.features.vol.span_days = f.at("vol_span").get<int>();
    cfg.features.vol.min_periods = f.at("vol_min_periods").get<int>();
    cfg.features.vol.vol_floor = f.at("vol_floor").get<double>();
    cfg.features.price_std_window = f.at("price_std_window").get<int>();
    cfg.features.macd_std_window = f.at("macd_std_window").get<int>();
    cfg.features.std_floor = f.at("std_floor").get<double>();
    cfg.features.winsorize = f.at("winsorize").get<bool>();
    cfg.features.winsor_half_life = f.at("winsor_half_life").get<double>();
    cfg.features.winsor_sigmas = f.at("winsor_sigmas").get<double>();
    cfg.features.lookback = f.at("lookback").get<int>();
    if (cfg.features.vol.span_days < 1 || cfg.features.vol.min_periods < 1 || !(cfg.features.vol.vol_floor > 0.0) ||
        cfg.features.price_std_window < 2 || cfg.features.macd_std_window < 2 || !(cfg.features.std_floor > 0.0) ||
        !(cfg.features.winsor_half_life >= 1.0) || !(cfg.features.winsor_sigmas > 0.0) || cfg.features.lookback < 1)
      throw ValidationError("config: feature parameters out of range");

    auto train = doc.at("train");
    const auto& solver = doc.at("solver");
    train["solver_max_iters"] = solver.at("max_iters");
    train["solver_tol"] = solver.at("tol");
    train["solver_gamma"] = solver.at("gamma");
    const bool train_seed_given = user.contains("train") && user["train"].contains("seed");
    if (!train_seed_given) train["seed"] = cfg.seed;
    cfg.train = training::train_config_from_json(train);

    cfg.strategies.clear();
    std::set<ModelKind> seen;
    for (const auto& s : doc.at("strategies")) {
      const auto k = model::model_kind_from_string(s.get<std::string>());
      if (!seen.insert(k).second) throw ValidationError("config: strategy '" + s.get<std::string>() + "' listed twice");
      cfg.strategies.push_back(k);
    }
    if (cfg.strategies.empty()) throw ValidationError("config: strategies must not be empty");

    const auto& p = doc.at("plan");
    cfg.plan.type = p.at("type").get<std::string>();
    cfg.plan.initial_train_days = p.at("initial_train_days").get<int>();
    cfg.plan.test_days = p.at("test_days").get<int>();
    cfg.plan.max_windows = p.at("max_windows").get<int>();
    cfg.plan.first_test_year = p.at("first_test_year").get<int>();
    cfg.plan.test_years = p.at("test_years").get<int>();
    cfg.plan.valid_fraction = p.at("valid_fraction").get<double>();
    if (cfg.plan.type == "explicit")
      cfg.plan.windows = training::walk_forward_plan_from_json({{"windows", p.at("windows")}});
    if (cfg.plan.type != "expanding" && cfg.plan.type != "yearly" && cfg.plan.type != "explicit")
      throw ValidationError("plan.type must be expanding, yearly or explicit, got '" + cfg.plan.type + "'");

    const auto& b = doc.at("backtest");
    cfg.backtest.sigma_tgt = b.at("sigma_tgt").get<double>();
    if (!(cfg.backtest.sigma_tgt > 0.0)) throw ValidationError("config: backtest.sigma_tgt must be positive");
    cfg.backtest.cost_levels_bps = b.at("cost_levels_bps").get<std::vector<double>>();
    for (double c : cfg.backtest.cost_levels_bps)
      if (!(c >= 0.0)) throw ValidationError("config: cost levels must be non-negative");
    const auto cv = b.at("cost_volatility").get<std::string>();
    if (cv == "asset") cfg.backtest.cost_volatility = backtest::CostVolatility::asset;
    else if (cv == "target") cfg.backtest.cost_volatility = backtest::CostVolatility::target;
    else throw ValidationError("config: backtest.cost_volatility must be asset or target");
    const auto rs = b.at("rescale").get<std::string>();
    if (rs != "ex_post" && rs != "rolling") throw ValidationError("config: backtest.rescale must be ex_post or rolling");
    cfg.backtest.rolling_rescale = rs == "rolling";

    cfg.gradcheck = gradcheck::gradcheck_config_from_json(doc.at("gradcheck"));

    const auto& e = doc.at("export");
    if (!e.at("checkpoint").is_null()) cfg.export_checkpoint = fs::path(e.at("checkpoint").get<std::string>());
    cfg.export_dates = e.at("dates").get<std::vector<std::string>>();

    fs::path out = doc.at("output_dir").get<std::string>();
    if (out.is_relative()) {
      if (const char* root = std::getenv(kOutputRootEnv); root && *root) out = fs::path(root) / out;
    }
    cfg.output_dir = out;
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("config: ") + ex.what());
  }
  return cfg;
}

RunConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (path) {
    const auto text = read_file(*path);
    doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ValidationError("config " + path->string() + " is not valid JSON");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_config(doc);
}

OutputLock::OutputLock(const fs::path& dir) : path_(dir / ".l2gmom.lock") {
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) throw IoError("output directory " + dir.string() + " is locked by another process (" + path_.string() + ")");
  std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
  std::fclose(f);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

data::PricePanel load_prices(const RunConfig& cfg) {
  if (cfg.csv) return data::load_csv(*cfg.csv, cfg.ingest);
  if (cfg.synthetic) return data::generate_synthetic(*cfg.synthetic);
  throw ValidationError("config needs exactly one data source: data.csv or data.synthetic");
}

// ----------------------------------------------------------------- commands

CommandResult cmd_synth(const RunConfig& cfg, bool force) {
  if (!cfg.synthetic) throw ValidationError("synth needs data.synthetic in the config");
  const auto target = cfg.output_dir / "prices.csv";
  refuse_overwrite({target}, force);
  return with_manifest("synth", cfg, [&] {
    const auto panel = data::generate_synthetic(*cfg.synthetic);
    std::ostringstream ss;
    data::write_csv(panel, ss);
    write_file(target, ss.str());
    CommandResult r;
    r.outputs.push_back(target);
    r.summary = {{"assets", panel.n_assets()}, {"days", panel.n_dates()}};
    return r;
  });
}

CommandResult cmd_features(const RunConfig& cfg, bool force) {
  const auto target = cfg.output_dir / "features.csv";
  refuse_overwrite({target}, force);
  return with_manifest("features", cfg, [&] {
    const auto ds = training::prepare_dataset(load_prices(cfg), cfg.features);
    std::ostringstream ss;
    features::write_csv(ds.u(), ss);
    write_file(target, ss.str());
    CommandResult r;
    r.outputs.push_back(target);
    r.summary = {{"assets", ds.n_assets()}, {"days", ds.n_dates()}, {"valid_asset_days", ds.u().valid.count()}};
    return r;
  });
}

CommandResult cmd_backtest(const RunConfig& cfg, bool force) {
  const auto dir = cfg.output_dir;
  refuse_overwrite({dir / "metrics.csv"}, force);
  return with_manifest("backtest", cfg, [&] {
    CommandResult r;
    auto emit = [&](const fs::path& p, const std::string& content) {
      write_file(p, content);
      r.outputs.push_back(p);
    };
    const auto ds = training::prepare_dataset(load_prices(cfg), cfg.features);
    const auto& dates = ds.prices.dates;
    const auto plan = cfg.plan.build(dates);

    std::vector<ModelKind> learned;
    for (auto k : cfg.strategies)
      if (is_learned(k)) learned.push_back(k);
    training::WalkForwardResult wf;
    if (!learned.empty()) {
      wf = training::walk_forward(ds, plan, learned, cfg.train, [](const std::string& m) { std::cerr << m << '\n'; });
    } else {
      for (const auto& w : plan.windows) {
        const auto [a, b] = training::row_range(dates, w.test_start, w.test_end);
        for (auto t = a; t <= b; ++t) wf.test_rows.push_back(t);
      }
    }

    const Matrix next_ret = backtest::next_returns(ds.returns);
    std::vector<backtest::StrategyRecord> records;
    for (auto k : cfg.strategies) {
      Matrix pos;
      if (k == ModelKind::long_only) pos = backtest::strategy_long_only(ds.vols);
      else if (k == ModelKind::macd) pos = backtest::strategy_macd(ds.u());
      else pos = wf.positions.at(k);
      backtest::StrategyRecord rec;
      rec.name = std::string(model::to_string(k));
      rec.positions = backtest::restrict_rows(pos, wf.test_rows);
      rec.returns = backtest::portfolio_returns(rec.positions, next_ret, ds.vols.sigma_ann, cfg.backtest.sigma_tgt);
      records.push_back(std::move(rec));
    }

    std::vector<std::pair<std::string, backtest::MetricsTable>> raw, rescaled;
    std::vector<std::pair<std::string, std::vector<backtest::CostPoint>>> curves;
    std::vector<backtest::StrategyRecord> rescaled_records;
    for (const auto& rec : records) {
      const Vector series = backtest::compact(rec.returns);
      if (series.size() == 0) throw ValidationError("strategy " + rec.name + " has no defined returns in the test period");
      raw.emplace_back(rec.name, backtest::metrics(series));
      const Vector scaled = cfg.backtest.rolling_rescale
                                ? backtest::rolling_vol_rescale(rec.returns, cfg.backtest.sigma_tgt)
                                : backtest::target_vol_rescale(rec.returns, cfg.backtest.sigma_tgt);
      rescaled.emplace_back(rec.name, backtest::metrics(backtest::compact(scaled)));
      rescaled_records.push_back({rec.name, rec.positions, scaled});
      curves.emplace_back(rec.name, backtest::cost_curve(rec.positions, next_ret, ds.vols.sigma_ann,
                                                         cfg.backtest.cost_levels_bps, cfg.backtest.sigma_tgt,
                                                         cfg.backtest.cost_volatility));
    }

    std::ostringstream m;
    backtest::write_metrics_csv(m, raw, rescaled);
    emit(dir / "metrics.csv", m.str());

    std::ostringstream c1, c2;
    backtest::write_cumulative_csv(c1, dates, records, false);
    emit(dir / "cumulative_raw.csv", c1.str());
    backtest::write_cumulative_csv(c2, dates, rescaled_records, false);
    emit(dir / "cumulative_rescaled.csv", c2.str());

    std::ostringstream daily;
    daily << "# daily portfolio return from date t to t+1, volatility-targeted per asset, raw (not rescaled)\n";
    daily << "date";
    for (const auto& rec : records) daily << ',' << rec.name;
    daily << '\n';
    for (auto t : wf.test_rows) {
      daily << format_date(dates[static_cast<std::size_t>(t)]);
      for (const auto& rec : records) daily << ',' << (std::isfinite(rec.returns(t)) ? format_double(rec.returns(t)) : "");
      daily << '\n';
    }
    emit(dir / "daily_returns.csv", daily.str());

    const auto div = backtest::diversification(records);
    std::ostringstream corr, agree;
    backtest::write_matrix_csv(corr, "Pearson correlation of daily raw portfolio returns over common test days",
                               div.names, div.correlation);
    emit(dir / "correlation.csv", corr.str());
    backtest::write_matrix_csv(agree, "share of asset-days where both positions have the same sign (0 matches only 0)",
                               div.names, div.sign_agreement);
    emit(dir / "sign_agreement.csv", agree.str());

    std::ostringstream cc;
    backtest::write_cost_curves_csv(cc, curves);
    emit(dir / "cost_curves.csv", cc.str());

    nlohmann::json log{{"plan", training::to_json(plan)}, {"train_config", training::to_json(cfg.train)},
                       {"windows", wf.window_logs}};
    emit(dir / "training_log.json", log.dump(2) + "\n");
    for (const auto& [kind, cks] : wf.checkpoints)
      for (std::size_t w = 0; w < cks.size(); ++w)
        emit(dir / "checkpoints" / (std::string(model::to_string(kind)) + "_window" + std::to_string(w) + ".json"),
             cks[w].dump(2) + "\n");

    nlohmann::json summary = nlohmann::json::object();
    for (const auto& [name, mt] : raw)
      summary[name] = {{"sharpe", mt.sharpe ? nlohmann::json(*mt.sharpe) : nlohmann::json()},
                       {"vol", mt.vol ? nlohmann::json(*mt.vol) : nlohmann::json()}};
    r.summary = {{"test_days", wf.test_rows.size()}, {"windows", plan.windows.size()}, {"strategies", summary}};
    return r;
  });
}

nlohmann::json graph_snapshot(const Matrix& graph_norm, const std::vector<Eigen::Index>& assets,
                              const std::vector<std::string>& tickers, Date date, const std::string& checkpoint_id) {
  nlohmann::json edges = nlohmann::json::array();
  std::vector<std::size_t> order(assets.size());
  for (std::size_t k = 0; k < assets.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return assets[a] < assets[b]; });
  for (std::size_t a = 0; a < order.size(); ++a)
    for (std::size_t b = a + 1; b < order.size(); ++b) {
      const auto ka = static_cast<Eigen::Index>(order[a]);
      const auto kb = static_cast<Eigen::Index>(order[b]);
      const double w = graph_norm(ka, kb);
      if (!(w > 0.0)) continue;
      const auto i = assets[order[a]];
      const auto j = assets[order[b]];
      edges.push_back({{"i", i},
                       {"j", j},
                       {"source", tickers[static_cast<std::size_t>(i)]},
                       {"target", tickers[static_cast<std::size_t>(j)]},
                       {"weight", w}});
    }
  nlohmann::json active = nlohmann::json::array();
  for (auto k : order) active.push_back(tickers[static_cast<std::size_t>(assets[k])]);
  return {{"date", format_date(date)}, {"checkpoint_id", checkpoint_id}, {"nodes", tickers},
          {"active_nodes", active},    {"edges", edges}};
}

CommandResult cmd_export_graphs(const RunConfig& cfg, bool force) {
  if (!cfg.export_checkpoint) throw ValidationError("export-graphs needs a checkpoint (export.checkpoint or --checkpoint)");
  if (cfg.export_dates.empty()) throw ValidationError("export-graphs needs at least one date");
  const auto text = read_file(*cfg.export_checkpoint);
  const auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ValidationError("checkpoint " + cfg.export_checkpoint->string() + " is not valid JSON");
  const auto ensemble = training::ensemble_from_checkpoint(doc);
  const auto checkpoint_id = fnv1a_hex(text);
  const auto dir = cfg.output_dir / "graphs";
  refuse_overwrite({dir / "index.json"}, force);

  return with_manifest("export-graphs", cfg, [&] {
    const auto ds = training::prepare_dataset(load_prices(cfg), cfg.features);
    const auto& dates = ds.prices.dates;
    const bool need_v = ensemble.members.front().input == model::HeadInput::lookback;
    CommandResult r;
    nlohmann::json exported = nlohmann::json::array(), errors = nlohmann::json::array();
    for (const auto& text_date : cfg.export_dates) {
      try {
        const Date d = parse_date(text_date);
        const auto it = std::lower_bound(dates.begin(), dates.end(), d);
        if (it == dates.end() || *it != d) throw ValidationError("unknown date " + text_date + " (not a trading day in the data)");
        const auto t = static_cast<Eigen::Index>(it - dates.begin());
        nlohmann::json snap;
        if (auto s = ds.sample(t, training::Universe::lookback, -1, need_v)) {
          Matrix g = Matrix::Zero(s->size(), s->size());
          for (const auto& m : ensemble.members) g += training::network_graph(m, *s);
          g /= static_cast<double>(ensemble.members.size());
          snap = graph_snapshot(g, s->assets, ds.prices.tickers, d, checkpoint_id);
        } else {
          snap = graph_snapshot(Matrix(), {}, ds.prices.tickers, d, checkpoint_id);
        }
        const auto path = dir / (format_date(d) + ".json");
        write_file(path, snap.dump(2) + "\n");
        r.outputs.push_back(path);
        exported.push_back(format_date(d));
      } catch (const ValidationError& e) {
        errors.push_back({{"date", text_date}, {"error", e.what()}});
      }
    }
    nlohmann::json index{{"checkpoint", cfg.export_checkpoint->string()},
                         {"checkpoint_id", checkpoint_id},
                         {"kind", model::to_string(ensemble.kind)},
                         {"members", ensemble.members.size()},
                         {"graph", "member-averaged normalized adjacency"},
                         {"exported", exported},
                         {"errors", errors}};
    write_file(dir / "index.json", index.dump(2) + "\n");
    r.outputs.push_back(dir / "index.json");
    if (exported.empty()) throw ValidationError("no date could be exported: " + errors.dump());
    r.summary = {{"exported", exported.size()}, {"errors", errors}};
    return r;
  });
}

CommandResult cmd_gradcheck(const RunConfig& cfg, bool force) {
  const auto target = cfg.output_dir / "gradcheck.json";
  refuse_overwrite({target}, force);
  return with_manifest("gradcheck", cfg, [&] {
    const auto report = gradcheck::run_gradcheck(cfg.gradcheck);
    auto doc = gradcheck::to_json(report);
    doc["config"] = gradcheck::to_json(cfg.gradcheck);
    write_file(target, doc.dump(2) + "\n");
    CommandResult r;
    r.outputs.push_back(target);
    r.summary = {{"pass", report.pass},
                 {"checked", report.checked},
                 {"passed", report.passed},
                 {"excluded_kink_adjacent", report.excluded},
                 {"worst_rel_error", report.worst_rel_error}};
    return r;
  });
}

// ---------------------------------------------------------------- main entry

int run(int argc, char** argv) {
  CLI::App app{"Learned-graph network momentum: synthetic data, features, walk-forward backtests and graph export"};
  app.require_subcommand(1);

  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> out_dir;
  bool force = false;
  std::optional<std::string> checkpoint;
  std::vector<std::string> dates;
  bool inject_fault = false;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON run configuration");
    sub->add_option("--set", overrides, "Override a config key: dotted.path=value (repeatable)");
    sub->add_option("-o,--out", out_dir, "Output directory (relative paths resolve under $L2GMOM_OUTPUT_ROOT)");
    sub->add_flag("-f,--force", force, "Overwrite existing outputs");
  };
  auto* synth = app.add_subcommand("synth", "Write a synthetic price panel to prices.csv");
  auto* feats = app.add_subcommand("features", "Compute momentum features and write features.csv");
  auto* bt = app.add_subcommand("backtest", "Run the walk-forward backtest and write the report bundle");
  auto* eg = app.add_subcommand("export-graphs", "Export learned graph snapshots for given dates");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the unrolled layer gradients");
  for (auto* s : {synth, feats, bt, eg, gc}) common(s);
  eg->add_option("--checkpoint", checkpoint, "Ensemble checkpoint JSON written by backtest");
  eg->add_option("--dates", dates, "Dates to export (YYYY-MM-DD)")->delimiter(',');
  gc->add_flag("--inject-fault", inject_fault, "Corrupt one analytic gradient entry (test hook)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  try {
    if (out_dir) overrides.push_back("output_dir=\"" + *out_dir + "\"");
    if (checkpoint) overrides.push_back("export.checkpoint=\"" + *checkpoint + "\"");
    if (!dates.empty()) overrides.push_back("export.dates=" + nlohmann::json(dates).dump());
    if (inject_fault) overrides.push_back("gradcheck.inject_fault=true");
    std::optional<fs::path> path;
    if (config_path) path = fs::path(*config_path);
    const auto cfg = load_config(path, overrides);

    CommandResult result;
    if (synth->parsed()) result = cmd_synth(cfg, force);
    else if (feats->parsed()) result = cmd_features(cfg, force);
    else if (bt->parsed()) result = cmd_backtest(cfg, force);
    else if (eg->parsed()) result = cmd_export_graphs(cfg, force);
    else result = cmd_gradcheck(cfg, force);

    std::cout << result.summary.dump(2) << '\n';
    for (const auto& p : result.outputs) std::cout << "wrote " << p.string() << '\n';
    if (gc->parsed() && !result.summary.value("pass", false)) {
      std::cerr << "gradcheck FAILED\n";
      return kNumeric;
    }
    if (eg->parsed() && !result.summary.at("errors").empty())
      std::cerr << "some dates were not exported; see graphs/index.json\n";
    return kOk;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
}

}  // namespace l2gmom::cli
