#include "l2gmom/unroll.hpp"

#include "l2gmom/errors.hpp"

#include <nlohmann/json.hpp>

namespace l2gmom::unroll {

using graph::degree_adjoint;
using graph::degree_apply;
using graph::EdgeLayout;

UnrollParams UnrollParams::constant(int depth, double alpha, double beta, double gamma) {
  if (depth < 1) throw ValidationError("unroll depth must be >= 1");
  if (!(alpha > 0.0) || !(beta > 0.0) || !(gamma > 0.0))
    throw ValidationError("unroll alpha, beta, gamma must be positive");
  const auto n = depth + 1;
  return {Vector::Constant(n, std::log(alpha)), Vector::Constant(n, std::log(beta)),
          Vector::Constant(n, std::log(gamma))};
}

UnrollParams UnrollParams::zeros_like(const UnrollParams& p) {
  return {Vector::Zero(p.raw_alpha.size()), Vector::Zero(p.raw_beta.size()), Vector::Zero(p.raw_gamma.size())};
}

void UnrollParams::validate() const {
  if (raw_alpha.size() < 2) throw ValidationError("unroll depth must be >= 1");
  if (raw_beta.size() != raw_alpha.size() || raw_gamma.size() != raw_alpha.size())
    throw ValidationError("unroll parameter vectors differ in length");
  if (!raw_alpha.allFinite() || !raw_beta.allFinite() || !raw_gamma.allFinite())
    throw ValidationError("unroll parameters must be finite");
}

Vector UnrollParams::flatten() const {
  Vector flat(3 * raw_alpha.size());
  flat << raw_alpha, raw_beta, raw_gamma;
  return flat;
}

UnrollParams UnrollParams::unflatten(const Vector& flat, int depth) {
  const auto n = depth + 1;
  if (flat.size() != 3 * n) throw ValidationError("flat unroll parameter size mismatch");
  return {flat.segment(0, n), flat.segment(n, n), flat.segment(2 * n, n)};
}

namespace {

UnrollResult run(graph::DistanceVector dist, Matrix features, const UnrollParams& params) {
  params.validate();
  const EdgeLayout layout(EdgeLayout::nodes_for_edges(dist.h.size()));
  if (layout.nodes() < 2) throw ValidationError("unrolled layer needs at least two nodes");
  const auto e = layout.edges();
  const auto n = layout.nodes();
  const Vector alpha = params.alpha();
  const Vector beta = params.beta();
  const Vector gamma = params.gamma();
  const Vector& h = dist.h;

  UnrollResult out;
  auto& tape = out.tape;
  tape.layers.reserve(static_cast<std::size_t>(params.layers()));
  Vector w = Vector::Zero(e);
  Vector v = Vector::Zero(n);
  for (int l = 0; l < params.layers(); ++l) {
    const double a = alpha(l), b = beta(l), g = gamma(l);
    if (!(a * g > 0.0) || !std::isfinite(a * g) || !std::isfinite(b))
      throw NumericError("unrolled layer " + std::to_string(l) + ": alpha*gamma must be positive and finite");
    LayerRecord rec;
    rec.w = w;
    rec.v = v;
    rec.r1 = w - g * (4.0 * b * w + 2.0 * h + degree_adjoint(layout, v));
    rec.r2 = v + g * degree_apply(layout, w);
    rec.p1 = rec.r1.cwiseMax(0.0);
    rec.p2 = (rec.r2.array() - (rec.r2.array().square() + 4.0 * a * g).sqrt()) / 2.0;
    const Vector q1 = rec.p1 - g * (4.0 * b * rec.p1 + 2.0 * h + degree_adjoint(layout, rec.p2));
    const Vector q2 = rec.p2 + g * degree_apply(layout, rec.p1);
    w = w - rec.r1 + q1;
    v = v - rec.r2 + q2;
    if (!w.allFinite() || !v.allFinite())
      throw NumericError("unrolled layer " + std::to_string(l) + " produced a non-finite iterate");
    tape.layers.push_back(std::move(rec));
  }
  tape.w_final = w;
  tape.w_out = w.cwiseMax(0.0);
  tape.params = params;
  tape.distances = std::move(dist);
  tape.features = std::move(features);
  out.graph = graph::GraphEstimate::from_edges(layout, tape.w_out);
  return out;
}

}  // namespace

UnrollResult forward(const Matrix& v, const UnrollParams& params) {
  return run(graph::pairwise_distances(v), v, params);
}

UnrollResult forward_distances(const graph::DistanceVector& h, const UnrollParams& params) {
  return run(h, Matrix(), params);
}

graph::GraphEstimate replay(const UnrollTape& tape) {
  return run(tape.distances, Matrix(), tape.params).graph;
}

UnrollGradients backward(const UnrollTape& tape, const Matrix& grad_a) {
  const EdgeLayout layout(EdgeLayout::nodes_for_edges(tape.w_out.size()));
  if (grad_a.rows() != layout.nodes() || grad_a.cols() != layout.nodes())
    throw ValidationError("backward: upstream gradient has shape " + std::to_string(grad_a.rows()) + "x" +
                          std::to_string(grad_a.cols()) + ", expected " + std::to_string(layout.nodes()) +
                          "x" + std::to_string(layout.nodes()));
  Vector grad_w(layout.edges());
  for (Eigen::Index k = 0; k < layout.edges(); ++k)
    grad_w(k) = grad_a(layout.src(k), layout.dst(k)) + grad_a(layout.dst(k), layout.src(k));
  return backward_edges(tape, grad_w);
}

UnrollGradients backward_edges(const UnrollTape& tape, const Vector& grad_w) {
  const EdgeLayout layout(EdgeLayout::nodes_for_edges(tape.w_out.size()));
  if (grad_w.size() != layout.edges()) throw ValidationError("backward: edge gradient size mismatch");
  if (static_cast<int>(tape.layers.size()) != tape.params.layers())
    throw ValidationError("backward: tape does not match its parameters");
  const Vector alpha = tape.params.alpha();
  const Vector beta = tape.params.beta();
  const Vector gamma = tape.params.gamma();
  const Vector& h = tape.distances.h;

  UnrollGradients out;
  Vector g_alpha = Vector::Zero(alpha.size());
  Vector g_beta = Vector::Zero(beta.size());
  Vector g_gamma = Vector::Zero(gamma.size());
  out.h = Vector::Zero(h.size());

  // Projection of the final iterate.
  Vector gw = (tape.w_final.array() > 0.0).select(grad_w, 0.0);
  Vector gv = Vector::Zero(layout.nodes());

  for (int l = static_cast<int>(tape.layers.size()) - 1; l >= 0; --l) {
    const auto& rec = tape.layers[static_cast<std::size_t>(l)];
    const double a = alpha(l), b = beta(l), g = gamma(l);

    // w' = w - r1 + q1, v' = v - r2 + q2
    const Vector& g_q1 = gw;
    const Vector& g_q2 = gv;
    Vector g_r1 = -gw;
    Vector g_r2 = -gv;
    Vector g_w = gw;
    Vector g_v = gv;

    // q2 = p2 + g D p1
    Vector g_p2 = g_q2;
    Vector g_p1 = g * degree_adjoint(layout, g_q2);
    g_gamma(l) += g_q2.dot(degree_apply(layout, rec.p1));

    // q1 = p1 - g (4 b p1 + 2 h + D^T p2)
    g_p1 += (1.0 - 4.0 * g * b) * g_q1;
    g_p2 -= g * degree_apply(layout, g_q1);
    out.h -= 2.0 * g * g_q1;
    g_gamma(l) -= g_q1.dot(4.0 * b * rec.p1 + 2.0 * h + degree_adjoint(layout, rec.p2));
    g_beta(l) -= 4.0 * g * g_q1.dot(rec.p1);

    // p2 = (r2 - sqrt(r2^2 + 4 a g)) / 2
    const Eigen::ArrayXd s = (rec.r2.array().square() + 4.0 * a * g).sqrt();
    g_r2.array() += g_p2.array() * (1.0 - rec.r2.array() / s) / 2.0;
    g_alpha(l) -= (g_p2.array() * g / s).sum();
    g_gamma(l) -= (g_p2.array() * a / s).sum();

    // p1 = max(0, r1)
    g_r1.array() += (rec.r1.array() > 0.0).select(g_p1.array(), 0.0);

    // r2 = v + g D w
    g_v += g_r2;
    g_w += g * degree_adjoint(layout, g_r2);
    g_gamma(l) += g_r2.dot(degree_apply(layout, rec.w));

    // r1 = w - g (4 b w + 2 h + D^T v)
    g_w += (1.0 - 4.0 * g * b) * g_r1;
    g_v -= g * degree_apply(layout, g_r1);
    out.h -= 2.0 * g * g_r1;
    g_gamma(l) -= g_r1.dot(4.0 * b * rec.w + 2.0 * h + degree_adjoint(layout, rec.v));
    g_beta(l) -= 4.0 * g * g_r1.dot(rec.w);

    gw = std::move(g_w);
    gv = std::move(g_v);
  }

  out.raw.raw_alpha = g_alpha.cwiseProduct(alpha);
  out.raw.raw_beta = g_beta.cwiseProduct(beta);
  out.raw.raw_gamma = g_gamma.cwiseProduct(gamma);

  if (tape.features.size() != 0) {
    const auto& features = tape.features;
    const double scale = tape.distances.scale;
    const bool rescaled = features.rows() > 1 && (tape.distances.h.array() != 0.0).any() && scale > 0.0;
    Vector g_raw = out.h;
    if (rescaled) {
      // h = raw / mean(raw)
      const double e = static_cast<double>(h.size());
      g_raw = (out.h.array() - out.h.dot(h) / e) / scale;
    }
    out.features = Matrix::Zero(features.rows(), features.cols());
    for (Eigen::Index k = 0; k < layout.edges(); ++k) {
      const auto i = layout.src(k);
      const auto j = layout.dst(k);
      const Eigen::RowVectorXd diff = 2.0 * g_raw(k) * (features.row(i) - features.row(j));
      out.features.row(i) += diff;
      out.features.row(j) -= diff;
    }
  }
  return out;
}

std::vector<signed char> kink_pattern(const UnrollTape& tape) {
  std::vector<signed char> pattern;
  for (const auto& rec : tape.layers)
    for (Eigen::Index k = 0; k < rec.r1.size(); ++k)
      pattern.push_back(static_cast<signed char>((rec.r1(k) > 0.0) - (rec.r1(k) < 0.0)));
  for (Eigen::Index k = 0; k < tape.w_final.size(); ++k)
    pattern.push_back(static_cast<signed char>((tape.w_final(k) > 0.0) - (tape.w_final(k) < 0.0)));
  return pattern;
}

double kink_distance(const UnrollTape& tape) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& rec : tape.layers) d = std::min(d, rec.r1.cwiseAbs().minCoeff());
  return std::min(d, tape.w_final.cwiseAbs().minCoeff());
}

nlohmann::json to_json(const UnrollParams& p) {
  auto vec = [](const Vector& x) { return std::vector<double>(x.data(), x.data() + x.size()); };
  return {{"depth", p.depth()},
          {"raw_alpha", vec(p.raw_alpha)},
          {"raw_beta", vec(p.raw_beta)},
          {"raw_gamma", vec(p.raw_gamma)}};
}

UnrollParams unroll_params_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& a) {
    const auto v = a.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  UnrollParams p;
  try {
    p.raw_alpha = vec(j.at("raw_alpha"));
    p.raw_beta = vec(j.at("raw_beta"));
    p.raw_gamma = vec(j.at("raw_gamma"));
    if (j.contains("depth") && j.at("depth").get<int>() != p.depth())
      throw ValidationError("unroll depth does not match parameter lengths");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("unroll params: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace l2gmom::unroll
