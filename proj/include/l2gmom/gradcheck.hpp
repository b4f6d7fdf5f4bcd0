#pragma once

#include "l2gmom/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace l2gmom::gradcheck {

/// Central-difference check of the unrolled layer's backward pass on a random
/// instance, using the scalar loss <G, A> for an upstream matrix G.
struct GradcheckConfig {
  int nodes = 5;
  int features = 4;
  int depth = 4;
  double eps = 1e-5;
  double rtol = 1e-4;
  double atol = 1e-9;
  double kink_tol = 1e-6;
  double min_pass_fraction = 0.99;
  std::uint64_t seed = 0;
  bool zero_upstream = false;
  bool check_features = true;
  bool inject_fault = false;  // perturbs one analytic gradient entry

  /// Small dimensions only: 2 <= nodes <= 8, 1 <= depth <= 6.
  void validate() const;
};

struct CoordinateCheck {
  std::string name;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  bool kink_adjacent = false;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<CoordinateCheck> coordinates;
  int checked = 0;   // coordinates away from kinks
  int passed = 0;
  int excluded = 0;  // kink-adjacent
  double worst_rel_error = 0.0;
  bool pass = false;

  double pass_fraction() const { return checked > 0 ? static_cast<double>(passed) / checked : 0.0; }
};

GradcheckReport run_gradcheck(const GradcheckConfig& cfg);

nlohmann::json to_json(const GradcheckConfig& cfg);
GradcheckConfig gradcheck_config_from_json(const nlohmann::json& j, GradcheckConfig base = {});
nlohmann::json to_json(const GradcheckReport& report);

}  // namespace l2gmom::gradcheck
