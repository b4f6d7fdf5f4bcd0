#include "l2gmom/data.hpp"

#include "l2gmom/errors.hpp"
#include "l2gmom/ewm.hpp"
#include "l2gmom/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace l2gmom::data {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool is_symmetric_nonneg_hollow(const Matrix& g) {
  if (g.rows() != g.cols()) return false;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    if (g(i, i) != 0.0) return false;
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      if (!std::isfinite(g(i, j)) || g(i, j) < 0.0 || g(i, j) != g(j, i)) return false;
    }
  }
  return true;
}

}  // namespace

void PricePanel::validate() const {
  const auto t = n_dates();
  const auto n = n_assets();
  if (prices.rows() != t || prices.cols() != n || available.rows() != t || available.cols() != n)
    throw ValidationError("price panel shape mismatch");
  for (std::size_t k = 1; k < dates.size(); ++k) {
    if (!(dates[k - 1] < dates[k]))
      throw ValidationError("dates not strictly increasing at " + format_date(dates[k]));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index r = 0; r < t; ++r) {
      if (available(r, i) && !(prices(r, i) > 0.0 && std::isfinite(prices(r, i))))
        throw ValidationError("non-positive price for " + tickers[i] + " on " + format_date(dates[r]));
    }
  }
}

PricePanel load_csv(const std::filesystem::path& path, const IngestConfig& config) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, config);
}

PricePanel parse_csv(std::istream& in, const IngestConfig& config) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;

  std::vector<std::string> tickers;
  std::unordered_map<std::string, int> ticker_index;
  std::map<Date, std::map<int, double>> rows;

  while (std::getline(in, line)) {
    ++line_no;
    const auto view = trim(line);
    if (view.empty()) continue;
    const auto fields = split(view, config.delimiter);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 3 || fields[0] != "date" || fields[1] != "ticker" || fields[2] != "price")
        throw ParseError("expected header 'date,ticker,price'", line_no);
      continue;
    }
    if (fields.size() != 3) throw ParseError("expected 3 columns", line_no);
    Date date;
    try {
      date = parse_date(fields[0]);
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (fields[1].empty()) throw ParseError("empty ticker", line_no);
    double price = 0.0;
    const auto pf = fields[2];
    auto [ptr, ec] = std::from_chars(pf.data(), pf.data() + pf.size(), price);
    if (ec != std::errc() || ptr != pf.data() + pf.size() || pf.empty())
      throw ParseError("malformed price '" + std::string(pf) + "'", line_no);
    if (!(price > 0.0) || !std::isfinite(price))
      throw ValidationError("line " + std::to_string(line_no) + ": non-positive price " +
                            std::string(pf) + " for " + std::string(fields[1]));

    const std::string ticker(fields[1]);
    auto it = ticker_index.find(ticker);
    if (it == ticker_index.end()) {
      it = ticker_index.emplace(ticker, static_cast<int>(tickers.size())).first;
      tickers.push_back(ticker);
    }
    auto& day = rows[date];
    if (!day.emplace(it->second, price).second)
      throw ConflictError("line " + std::to_string(line_no) + ": duplicate row for (" +
                          std::string(fields[0]) + ", " + ticker + ")");
  }
  if (rows.empty()) throw ValidationError("no rows");

  PricePanel panel;
  panel.tickers = std::move(tickers);
  const auto t = static_cast<Eigen::Index>(rows.size());
  const auto n = panel.n_assets();
  panel.prices = Matrix::Constant(t, n, kNaN);
  panel.available = Mask::Constant(t, n, false);
  Eigen::Index r = 0;
  for (const auto& [date, day] : rows) {
    panel.dates.push_back(date);
    for (const auto& [i, price] : day) {
      panel.prices(r, i) = price;
      panel.available(r, i) = true;
    }
    ++r;
  }
  panel.validate();
  return panel;
}

void write_csv(const PricePanel& panel, std::ostream& out) {
  out << "date,ticker,price\n";
  for (Eigen::Index r = 0; r < panel.n_dates(); ++r) {
    const auto date = format_date(panel.dates[r]);
    for (Eigen::Index i = 0; i < panel.n_assets(); ++i) {
      if (!panel.available(r, i)) continue;
      out << date << ',' << panel.tickers[i] << ',' << format_double(panel.prices(r, i)) << '\n';
    }
  }
}

ReturnPanel compute_returns(const PricePanel& panel) {
  ReturnPanel out{panel.dates, panel.tickers, Matrix::Constant(panel.n_dates(), panel.n_assets(), kNaN),
                  Mask::Constant(panel.n_dates(), panel.n_assets(), false)};
  for (Eigen::Index i = 0; i < panel.n_assets(); ++i) {
    for (Eigen::Index r = 1; r < panel.n_dates(); ++r) {
      if (panel.available(r, i) && panel.available(r - 1, i)) {
        out.returns(r, i) = panel.prices(r, i) / panel.prices(r - 1, i) - 1.0;
        out.available(r, i) = true;
      }
    }
  }
  return out;
}

VolPanel ewm_volatility(const ReturnPanel& returns, int span_days) {
  VolConfig cfg;
  cfg.span_days = span_days;
  return ewm_volatility(returns, cfg);
}

VolPanel ewm_volatility(const ReturnPanel& returns, const VolConfig& config) {
  if (config.span_days < 2) throw ValidationError("ewm span_days must be >= 2");
  if (config.min_periods < 2) throw ValidationError("ewm min_periods must be >= 2");
  if (!(config.vol_floor >= 0.0)) throw ValidationError("vol_floor must be >= 0");
  const auto t = returns.returns.rows();
  const auto n = returns.returns.cols();
  VolPanel out{returns.dates, returns.tickers, Matrix::Constant(t, n, kNaN), Matrix::Constant(t, n, kNaN),
               Mask::Constant(t, n, false)};
  const double annualizer = std::sqrt(kTradingDays);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto stats = EwmStats::from_span(config.span_days);
    for (Eigen::Index r = 0; r < t; ++r) {
      if (!returns.available(r, i)) continue;
      stats.push(returns.returns(r, i));
      if (stats.count() < static_cast<std::size_t>(config.min_periods)) continue;
      const double sd = std::max(stats.stddev(), config.vol_floor);
      out.sigma_daily(r, i) = sd;
      out.sigma_ann(r, i) = sd * annualizer;
      out.defined(r, i) = true;
    }
  }
  return out;
}

WinsorBounds winsor_bounds(const Matrix& values, double half_life, double n_sigmas) {
  if (!(half_life >= 1.0)) throw ValidationError("winsorize half_life must be >= 1");
  if (!(n_sigmas > 0.0)) throw ValidationError("winsorize n_sigmas must be > 0");
  WinsorBounds b{Matrix::Constant(values.rows(), values.cols(), kNaN),
                 Matrix::Constant(values.rows(), values.cols(), kNaN)};
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    auto stats = EwmStats::from_half_life(half_life);
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      const double x = values(r, c);
      if (!std::isfinite(x)) continue;
      stats.push(x);
      const double sd = stats.stddev();
      if (std::isnan(sd)) continue;
      if (std::isinf(n_sigmas)) {
        b.lower(r, c) = -inf;
        b.upper(r, c) = inf;
      } else {
        b.lower(r, c) = stats.mean() - n_sigmas * sd;
        b.upper(r, c) = stats.mean() + n_sigmas * sd;
      }
    }
  }
  return b;
}

Matrix apply_bounds(const Matrix& values, const WinsorBounds& bounds) {
  Matrix out = values;
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      const double lo = bounds.lower(r, c);
      const double hi = bounds.upper(r, c);
      if (std::isnan(lo) || std::isnan(hi) || !std::isfinite(out(r, c))) continue;
      out(r, c) = std::clamp(out(r, c), lo, hi);
    }
  }
  return out;
}

Matrix winsorize(const Matrix& values, double half_life, double n_sigmas) {
  return apply_bounds(values, winsor_bounds(values, half_life, n_sigmas));
}

void SyntheticSpec::validate() const {
  if (n_assets < 1) throw ValidationError("synthetic n_assets must be >= 1");
  if (n_days < 2) throw ValidationError("synthetic n_days must be >= 2");
  if (!(trend_strength >= 0.0) || !std::isfinite(trend_strength))
    throw ValidationError("synthetic trend_strength must be >= 0");
  if (!(noise_scale > 0.0) || !std::isfinite(noise_scale))
    throw ValidationError("synthetic noise_scale must be > 0");
  if (!(trend_persistence >= 0.0 && trend_persistence < 1.0))
    throw ValidationError("synthetic trend_persistence must be in [0, 1)");
  if (!(shock_coupling >= 0.0 && shock_coupling <= 1.0))
    throw ValidationError("synthetic shock_coupling must be in [0, 1]");
  if (!(daily_vol > 0.0) || daily_vol > 0.2) throw ValidationError("synthetic daily_vol must be in (0, 0.2]");
  if (planted_graph.size() != 0) {
    if (planted_graph.rows() != n_assets || planted_graph.cols() != n_assets)
      throw ValidationError("planted_graph must be n_assets x n_assets");
    if (!is_symmetric_nonneg_hollow(planted_graph))
      throw ValidationError("planted_graph must be symmetric, nonnegative, with zero diagonal");
  }
  parse_date(start_date);
}

Matrix block_graph(int n_assets, int n_blocks, double weight) {
  if (n_blocks < 1 || n_blocks > n_assets) throw ValidationError("invalid block count");
  const auto labels = block_labels(n_assets, n_blocks);
  Matrix g = Matrix::Zero(n_assets, n_assets);
  for (int i = 0; i < n_assets; ++i)
    for (int j = 0; j < n_assets; ++j)
      if (i != j && labels[i] == labels[j]) g(i, j) = weight;
  return g;
}

std::vector<int> block_labels(int n_assets, int n_blocks) {
  std::vector<int> labels(n_assets);
  for (int i = 0; i < n_assets; ++i) labels[i] = static_cast<int>(static_cast<long>(i) * n_blocks / n_assets);
  return labels;
}

PricePanel generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.n_assets;
  const int t_len = spec.n_days;
  Rng rng(spec.seed);

  Matrix mixing = Matrix::Identity(n, n);
  if (spec.planted_graph.size() != 0) mixing += spec.planted_graph;
  for (int i = 0; i < n; ++i) mixing.row(i) /= mixing.row(i).sum();
  Vector mix_norm(n);
  for (int i = 0; i < n; ++i) mix_norm(i) = mixing.row(i).norm();

  Vector vol(n);
  for (int i = 0; i < n; ++i) vol(i) = spec.daily_vol * (0.6 + 0.8 * rng.uniform());

  PricePanel panel;
  panel.tickers.reserve(n);
  for (int i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "A%03d", i);
    panel.tickers.emplace_back(buf);
  }
  Date day = parse_date(spec.start_date);
  auto next_weekday = [](Date d) {
    do {
      d += std::chrono::days{1};
    } while (std::chrono::weekday{d} == std::chrono::Saturday ||
             std::chrono::weekday{d} == std::chrono::Sunday);
    return d;
  };
  while (std::chrono::weekday{day} == std::chrono::Saturday || std::chrono::weekday{day} == std::chrono::Sunday)
    day = next_weekday(day);

  panel.prices.resize(t_len, n);
  panel.available = Mask::Constant(t_len, n, true);
  panel.prices.row(0).setConstant(100.0);
  panel.dates.push_back(day);

  const double phi = spec.trend_persistence;
  const double innov = std::sqrt(1.0 - phi * phi);
  const double idio = std::sqrt(1.0 - spec.shock_coupling);
  const double common = std::sqrt(spec.shock_coupling);
  Vector z(n), eta(n), xi(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();

  for (int r = 1; r < t_len; ++r) {
    day = next_weekday(day);
    panel.dates.push_back(day);
    const Vector trend = (mixing * z).cwiseQuotient(mix_norm);
    for (int i = 0; i < n; ++i) eta(i) = rng.normal();
    for (int i = 0; i < n; ++i) xi(i) = rng.normal();
    const Vector shock = idio * eta + common * (mixing * xi).cwiseQuotient(mix_norm);
    for (int i = 0; i < n; ++i) {
      double ret = vol(i) * (spec.trend_strength * trend(i) + spec.noise_scale * shock(i));
      ret = std::max(ret, -0.95);
      panel.prices(r, i) = panel.prices(r - 1, i) * (1.0 + ret);
    }
    for (int i = 0; i < n; ++i) z(i) = phi * z(i) + innov * rng.normal();
  }
  return panel;
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("synthetic spec must be a JSON object");
  static const std::set<std::string> kKeys{"n_assets",       "n_days",    "trend_strength", "noise_scale",
                                           "trend_persistence", "shock_coupling", "daily_vol", "seed",
                                           "start_date",     "planted_graph"};
  for (const auto& [key, _] : j.items())
    if (!kKeys.count(key)) throw ValidationError("synthetic spec: unknown key '" + key + "'");
  SyntheticSpec s;
  try {
    s.n_assets = j.value("n_assets", s.n_assets);
    s.n_days = j.value("n_days", s.n_days);
    s.trend_strength = j.value("trend_strength", s.trend_strength);
    s.noise_scale = j.value("noise_scale", s.noise_scale);
    s.trend_persistence = j.value("trend_persistence", s.trend_persistence);
    s.shock_coupling = j.value("shock_coupling", s.shock_coupling);
    s.daily_vol = j.value("daily_vol", s.daily_vol);
    s.seed = j.value("seed", s.seed);
    s.start_date = j.value("start_date", s.start_date);
    if (j.contains("planted_graph")) {
      const auto& g = j.at("planted_graph");
      if (g.is_object()) {
        const auto type = g.value("type", std::string("blocks"));
        if (type != "blocks") throw ValidationError("unknown planted_graph type '" + type + "'");
        s.planted_graph = block_graph(s.n_assets, g.value("n_blocks", 2), g.value("weight", 1.0));
      } else if (g.is_array()) {
        const auto rows = static_cast<Eigen::Index>(g.size());
        s.planted_graph = Matrix::Zero(rows, rows);
        for (Eigen::Index r = 0; r < rows; ++r) {
          if (!g[r].is_array() || static_cast<Eigen::Index>(g[r].size()) != rows)
            throw ValidationError("planted_graph must be a square matrix");
          for (Eigen::Index c = 0; c < rows; ++c) s.planted_graph(r, c) = g[r][c].get<double>();
        }
      } else if (!g.is_null()) {
        throw ValidationError("planted_graph must be a matrix or a {type: blocks} object");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json j{{"n_assets", s.n_assets},
                   {"n_days", s.n_days},
                   {"trend_strength", s.trend_strength},
                   {"noise_scale", s.noise_scale},
                   {"trend_persistence", s.trend_persistence},
                   {"shock_coupling", s.shock_coupling},
                   {"daily_vol", s.daily_vol},
                   {"seed", s.seed},
                   {"start_date", s.start_date}};
  if (s.planted_graph.size() != 0) {
    auto g = nlohmann::json::array();
    for (Eigen::Index r = 0; r < s.planted_graph.rows(); ++r) {
      auto row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < s.planted_graph.cols(); ++c) row.push_back(s.planted_graph(r, c));
      g.push_back(row);
    }
    j["planted_graph"] = g;
  }
  return j;
}

}  // namespace l2gmom::data
