#include "pflab/policy.hpp"

#include <cmath>
#include <numbers>

#include "pflab/errors.hpp"

namespace pflab {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu(double x) { return x * sigmoid(x); }
double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

double clamped_log_std(double v) { return v < kLogStdMin ? kLogStdMin : v; }

void check_effective_order(const PolicyShape& shape, int effective_order) {
  if (effective_order < 1 || effective_order > shape.order) {
    throw ContractError("effective order " + std::to_string(effective_order) +
                        " outside 1.." + std::to_string(shape.order));
  }
}

}  // namespace

PolicyParams::PolicyParams(PolicyShape shape, double t_lo, double t_hi)
    : shape_(shape), t_lo_(t_lo), t_hi_(t_hi) {
  if (shape.order < 1 || shape.width < 1 || shape.depth < 1) {
    throw ConfigError("policy needs order >= 1, width >= 1 and depth >= 1");
  }
  if (shape.sum_to_one && shape.order < 2) {
    throw ConfigError("sum-to-one parameterization needs order >= 2");
  }
  if (!(t_hi > t_lo)) throw ConfigError("policy input range must be non-empty");
  std::size_t offset = 0;
  for (int l = 0; l < layers(); ++l) {
    offsets_.push_back(offset);
    offset += static_cast<std::size_t>(layer_out(l)) * (layer_in(l) + 1);
  }
  offsets_.push_back(offset);
  flat_.assign(offset + static_cast<std::size_t>(shape.action_dim()), 0.0);
}

void PolicyParams::check_finite() const {
  for (std::size_t i = 0; i < flat_.size(); ++i) {
    if (!std::isfinite(flat_[i])) {
      throw NumericError("policy parameter " + std::to_string(i) + " is not finite");
    }
  }
}

Vec mean_action(const PolicyParams& params, double t_i, double t_next, ForwardCache* cache) {
  const auto& flat = params.flat();
  const double span = params.t_hi() - params.t_lo();
  Vec h{(t_i - params.t_lo()) / span, (t_next - params.t_lo()) / span};
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
    cache->post.push_back(h);
  }
  for (int l = 0; l < params.layers(); ++l) {
    const int in = params.layer_in(l);
    const int out = params.layer_out(l);
    const double* w = flat.data() + params.weight_offset(l);
    const double* b = flat.data() + params.bias_offset(l);
    Vec z(static_cast<std::size_t>(out));
    for (int o = 0; o < out; ++o) {
      double acc = b[o];
      const double* row = w + static_cast<std::ptrdiff_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += row[i] * h[i];
      z[o] = acc;
    }
    if (l + 1 == params.layers()) {
      h = std::move(z);
      break;
    }
    Vec a(z.size());
    for (std::size_t o = 0; o < z.size(); ++o) a[o] = silu(z[o]);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
    h = std::move(a);
  }
  for (double v : h) {
    if (!std::isfinite(v)) throw NumericError("policy forward produced a non-finite output");
  }
  if (cache) cache->out = h;
  return h;
}

Vec action_to_coefficients(const PolicyShape& shape, VecView action, int effective_order) {
  check_effective_order(shape, effective_order);
  if (!shape.sum_to_one) return Vec(action.begin(), action.begin() + effective_order);
  Vec w(static_cast<std::size_t>(effective_order));
  double rest = 0.0;
  for (int j = 1; j < effective_order; ++j) {
    w[j] = action[j - 1];
    rest += action[j - 1];
  }
  w[0] = 1.0 - rest;
  return w;
}

Vec forward(const PolicyParams& params, double t_i, double t_next) {
  return action_to_coefficients(params.shape(), mean_action(params, t_i, t_next),
                                params.shape().order);
}

double gaussian_logprob(const PolicyParams& params, VecView mean, VecView action,
                        int effective_order) {
  check_effective_order(params.shape(), effective_order);
  const int used = params.shape().used_dims(effective_order);
  const auto log_std = params.log_std();
  double lp = 0.0;
  for (int j = 0; j < used; ++j) {
    const double ls = clamped_log_std(log_std[j]);
    const double zeta = (action[j] - mean[j]) * std::exp(-ls);
    lp += -ls - kHalfLog2Pi - 0.5 * zeta * zeta;
  }
  return lp;
}

double logprob(const PolicyParams& params, double t_i, double t_next, VecView action,
               int effective_order) {
  return gaussian_logprob(params, mean_action(params, t_i, t_next), action, effective_order);
}

ActionSample sample_action(const PolicyParams& params, double t_i, double t_next, Rng& rng,
                           int effective_order) {
  ActionSample s;
  s.effective_order = effective_order;
  s.mean = mean_action(params, t_i, t_next);
  const auto log_std = params.log_std();
  s.action.resize(s.mean.size());
  // Every dimension consumes one normal draw so streams stay aligned
  // regardless of warm-up masking.
  for (std::size_t j = 0; j < s.mean.size(); ++j) {
    const double zeta = rng.normal();
    s.action[j] = log_std[j] <= kLogStdMin ? s.mean[j] : s.mean[j] + std::exp(log_std[j]) * zeta;
  }
  s.weights = action_to_coefficients(params.shape(), s.action, effective_order);
  s.logprob = gaussian_logprob(params, s.mean, s.action, effective_order);
  return s;
}

void logprob_partials(const PolicyParams& params, VecView mean, VecView action,
                      int effective_order, std::span<double> d_mean,
                      std::span<double> d_log_std) {
  check_effective_order(params.shape(), effective_order);
  const int used = params.shape().used_dims(effective_order);
  const auto log_std = params.log_std();
  for (std::size_t j = 0; j < d_mean.size(); ++j) {
    d_mean[j] = 0.0;
    d_log_std[j] = 0.0;
  }
  for (int j = 0; j < used; ++j) {
    const double ls = clamped_log_std(log_std[j]);
    const double inv_var = std::exp(-2.0 * ls);
    const double diff = action[j] - mean[j];
    d_mean[j] = diff * inv_var;
    d_log_std[j] = log_std[j] <= kLogStdMin ? 0.0 : -1.0 + diff * diff * inv_var;
  }
}

void backward(const PolicyParams& params, const ForwardCache& cache, VecView d_out,
              std::span<double> grad) {
  const auto& flat = params.flat();
  Vec delta(d_out.begin(), d_out.end());
  for (int l = params.layers() - 1; l >= 0; --l) {
    const int in = params.layer_in(l);
    const int out = params.layer_out(l);
    const double* w = flat.data() + params.weight_offset(l);
    double* gw = grad.data() + params.weight_offset(l);
    double* gb = grad.data() + params.bias_offset(l);
    const Vec& input = cache.post[static_cast<std::size_t>(l)];
    Vec d_in(static_cast<std::size_t>(in), 0.0);
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      gb[o] += d;
      const double* row = w + static_cast<std::ptrdiff_t>(o) * in;
      double* grow = gw + static_cast<std::ptrdiff_t>(o) * in;
      for (int i = 0; i < in; ++i) {
        grow[i] += d * input[i];
        d_in[i] += d * row[i];
      }
    }
    if (l == 0) break;
    const Vec& pre = cache.pre[static_cast<std::size_t>(l - 1)];
    for (int i = 0; i < in; ++i) d_in[i] *= silu_grad(pre[i]);
    delta = std::move(d_in);
  }
}

std::vector<double> grad_logprob(const PolicyParams& params, double t_i, double t_next,
                                 VecView action, int effective_order) {
  ForwardCache cache;
  const Vec mean = mean_action(params, t_i, t_next, &cache);
  const std::size_t a = mean.size();
  Vec d_mean(a);
  Vec d_log_std(a);
  logprob_partials(params, mean, action, effective_order, d_mean, d_log_std);
  std::vector<double> grad(params.size(), 0.0);
  backward(params, cache, d_mean, grad);
  for (std::size_t j = 0; j < a; ++j) grad[params.log_std_offset() + j] = d_log_std[j];
  return grad;
}

PolicyParams init_to_baseline(PolicyShape shape, const std::string& baseline, std::uint64_t seed,
                              double t_lo, double t_hi, double log_std_init) {
  Vec coeffs;
  if (baseline == "ddim") {
    coeffs.assign(static_cast<std::size_t>(shape.order), 0.0);
    coeffs[0] = 1.0;
  } else if (baseline.size() == 3 && baseline.rfind("ab", 0) == 0 &&
             baseline[2] - '0' == shape.order) {
    coeffs = AdamsBashforthProvider::coefficients(shape.order);
  } else {
    throw ConfigError("unknown policy baseline '" + baseline + "' for order " +
                      std::to_string(shape.order) + " (expected ddim or ab" +
                      std::to_string(shape.order) + ")");
  }
  PolicyParams params(shape, t_lo, t_hi);
  Rng rng = Rng::stream(seed, {0x504F4C4943ULL});
  auto& flat = params.flat();
  for (int l = 0; l + 1 < params.layers(); ++l) {
    for (std::size_t i = params.weight_offset(l); i < params.bias_offset(l); ++i) {
      flat[i] = 1e-2 * rng.normal();
    }
  }
  const int head = params.layers() - 1;
  double* bias = flat.data() + params.bias_offset(head);
  if (shape.sum_to_one) {
    for (int j = 1; j < shape.order; ++j) bias[j - 1] = coeffs[j];
  } else {
    for (int j = 0; j < shape.order; ++j) bias[j] = coeffs[j];
  }
  for (double& v : params.log_std()) v = log_std_init;
  return params;
}

Vec PolicyMeanProvider::weights(const StepContext& ctx) const {
  return action_to_coefficients(params_.shape(), mean_action(params_, ctx.t_from, ctx.t_to),
                                ctx.order);
}

Json coeff_table_document(const std::string& id, const NoiseSchedule& schedule,
                          const StepGrid& grid, int order, const std::vector<Vec>& rows) {
  Json doc = Json::object();
  doc["format"] = "pflab-coeff-table";
  doc["version"] = 1;
  doc["id"] = id;
  doc["schedule"] = schedule;
  doc["grid"] = grid;
  doc["order"] = order;
  doc["weights"] = rows;
  return doc;
}

Json export_coeff_table(const PolicyParams& params, const StepGrid& grid,
                        const NoiseSchedule& schedule, const std::string& id) {
  PolicyMeanProvider provider(params);
  const auto& t = grid.times();
  std::vector<double> noise(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) noise[i] = schedule.noise_ratio(t[i]);
  const int steps = grid.transitions();
  const int m = params.shape().order;
  std::vector<Vec> rows;
  for (int i = 0; i < steps; ++i) {
    const int mi = steps == 1 ? 1 : std::min(i + 1, m);
    rows.push_back(provider.weights(StepContext{i, t[i], t[i + 1], mi, noise}));
  }
  return coeff_table_document(id, schedule, grid, m, rows);
}

namespace {

template <typename T>
T field(const Json& doc, const char* key, const std::string& where) {
  const std::string path = where + "/" + key;
  if (!doc.is_object() || !doc.contains(key)) throw ParseError("missing field at " + path);
  try {
    return doc.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ParseError("bad value at " + path + ": " + e.what());
  }
}

}  // namespace

TableProvider import_coeff_table(const Json& doc) {
  if (field<std::string>(doc, "format", "") != "pflab-coeff-table") {
    throw ParseError("unexpected document format at /format");
  }
  if (field<int>(doc, "version", "") != 1) throw ParseError("unsupported version at /version");
  const auto id = field<std::string>(doc, "id", "");
  if (!doc.contains("grid")) throw ParseError("missing field at /grid");
  const auto times = field<std::vector<double>>(doc.at("grid"), "times", "/grid");
  if (!doc.contains("weights") || !doc.at("weights").is_array()) {
    throw ParseError("missing or non-array field at /weights");
  }
  std::vector<Vec> rows;
  for (std::size_t i = 0; i < doc.at("weights").size(); ++i) {
    const auto& row = doc.at("weights")[i];
    if (!row.is_array()) throw ParseError("expected an array at /weights/" + std::to_string(i));
    Vec values;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!row[j].is_number()) {
        throw ParseError("expected a number at /weights/" + std::to_string(i) + "/" +
                         std::to_string(j));
      }
      values.push_back(row[j].get<double>());
    }
    rows.push_back(std::move(values));
  }
  const int order = field<int>(doc, "order", "");
  if (rows.size() + 1 != times.size()) {
    throw ParseError("/weights has " + std::to_string(rows.size()) + " rows but /grid/times has " +
                     std::to_string(times.size()) + " nodes");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].empty() || static_cast<int>(rows[i].size()) > order ||
        rows[i].size() > i + 1) {
      throw ParseError("invalid row length at /weights/" + std::to_string(i));
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      if (!std::isfinite(rows[i][j])) {
        throw ParseError("non-finite weight at /weights/" + std::to_string(i) + "/" +
                         std::to_string(j));
      }
    }
  }
  try {
    return TableProvider(id, times, rows);
  } catch (const ContractError& e) {
    throw ParseError(std::string("coefficient table: ") + e.what());
  }
}

TableProvider import_coeff_table(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError("coefficient table is not valid JSON at byte " + std::to_string(e.byte) +
                     ": " + e.what());
  }
  return import_coeff_table(doc);
}

Json policy_to_json(const PolicyParams& params) {
  const auto& s = params.shape();
  Json doc = Json::object();
  doc["format"] = "pflab-policy";
  doc["version"] = 1;
  doc["order"] = s.order;
  doc["width"] = s.width;
  doc["depth"] = s.depth;
  doc["sum_to_one"] = s.sum_to_one;
  doc["input_range"] = {params.t_lo(), params.t_hi()};
  Json layers = Json::array();
  for (int l = 0; l < params.layers(); ++l) {
    layers.push_back({{"in", params.layer_in(l)},
                      {"out", params.layer_out(l)},
                      {"weight_offset", params.weight_offset(l)},
                      {"bias_offset", params.bias_offset(l)}});
  }
  doc["layers"] = std::move(layers);
  doc["log_std_offset"] = params.log_std_offset();
  doc["params"] = params.flat();
  return doc;
}

PolicyParams policy_from_json(const Json& doc) {
  if (field<std::string>(doc, "format", "") != "pflab-policy") {
    throw ParseError("unexpected document format at /format");
  }
  if (field<int>(doc, "version", "") != 1) throw ParseError("unsupported version at /version");
  PolicyShape shape;
  shape.order = field<int>(doc, "order", "");
  shape.width = field<int>(doc, "width", "");
  shape.depth = field<int>(doc, "depth", "");
  shape.sum_to_one = field<bool>(doc, "sum_to_one", "");
  const auto range = field<std::vector<double>>(doc, "input_range", "");
  if (range.size() != 2) throw ParseError("expected two values at /input_range");
  PolicyParams params = [&] {
    try {
      return PolicyParams(shape, range[0], range[1]);
    } catch (const ConfigError& e) {
      throw ParseError(std::string("policy shape: ") + e.what());
    }
  }();
  auto flat = field<std::vector<double>>(doc, "params", "");
  if (flat.size() != params.size()) {
    throw ParseError("/params has " + std::to_string(flat.size()) + " values, shape needs " +
                     std::to_string(params.size()));
  }
  params.flat() = std::move(flat);
  return params;
}

}  // namespace pflab
