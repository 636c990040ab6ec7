#include "pflab/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <limits>
#include <sstream>

#include "pflab/errors.hpp"
#include "pflab/rng.hpp"

namespace pflab {

MixtureModel::MixtureModel(std::vector<double> weights, std::vector<Vec> means,
                           std::vector<double> stds)
    : dim_(0), weights_(std::move(weights)), means_(std::move(means)), stds_(std::move(stds)) {
  if (weights_.empty()) throw ContractError("mixture needs at least one component");
  if (means_.size() != weights_.size() || stds_.size() != weights_.size()) {
    throw ContractError("mixture weights, means and stds must have equal length");
  }
  dim_ = static_cast<int>(means_.front().size());
  if (dim_ < 1) throw ContractError("mixture dimension must be positive");
  double total = 0.0;
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    if (!(weights_[k] > 0.0) || !std::isfinite(weights_[k])) {
      throw ContractError("mixture weights must be positive");
    }
    if (!(stds_[k] > 0.0) || !std::isfinite(stds_[k])) {
      throw ContractError("mixture stds must be positive");
    }
    if (static_cast<int>(means_[k].size()) != dim_) {
      throw ContractError("mixture means must share one dimension");
    }
    for (double v : means_[k]) {
      if (!std::isfinite(v)) throw ContractError("mixture means must be finite");
    }
    total += weights_[k];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os.precision(17);
    os << "mixture weights sum to " << total << ", expected 1";
    throw ContractError(os.str());
  }
}

MixtureModel MixtureModel::standard_gaussian(int dim) {
  return MixtureModel({1.0}, {Vec(static_cast<std::size_t>(dim), 0.0)}, {1.0});
}

void MixtureModel::component_log_terms(const NoiseSchedule& schedule, VecView x, double t,
                                       std::vector<double>& log_terms,
                                       std::vector<double>& variances, double& alpha) const {
  if (static_cast<int>(x.size()) != dim_) {
    throw ContractError("input dimension does not match mixture dimension");
  }
  const auto as = schedule.alpha_sigma(t);
  alpha = as.alpha;
  const double sigma2 = as.sigma * as.sigma;
  const std::size_t n = weights_.size();
  log_terms.resize(n);
  variances.resize(n);
  const double half_d = 0.5 * dim_;
  for (std::size_t k = 0; k < n; ++k) {
    const double v = alpha * alpha * stds_[k] * stds_[k] + sigma2;
    double sq = 0.0;
    for (int d = 0; d < dim_; ++d) {
      const double diff = x[d] - alpha * means_[k][d];
      sq += diff * diff;
    }
    variances[k] = v;
    log_terms[k] = std::log(weights_[k]) - half_d * std::log(2.0 * std::numbers::pi * v) -
                   0.5 * sq / v;
  }
}

namespace {

double log_sum_exp(const std::vector<double>& terms) {
  const double top = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - top);
  return top + std::log(acc);
}

void check_finite_input(VecView x) {
  for (double v : x) {
    if (!std::isfinite(v)) throw NumericError("non-finite state passed to the noise predictor");
  }
}

}  // namespace

Vec MixtureModel::epsilon(const NoiseSchedule& schedule, VecView x, double t) const {
  check_finite_input(x);
  std::vector<double> log_terms;
  std::vector<double> variances;
  double alpha = 0.0;
  component_log_terms(schedule, x, t, log_terms, variances, alpha);
  nfe_.bump();
  const double lse = log_sum_exp(log_terms);
  if (!std::isfinite(lse)) throw NumericError("noise predictor: log-density overflow");
  const double sigma = schedule.alpha_sigma(t).sigma;
  Vec eps(static_cast<std::size_t>(dim_), 0.0);
  for (std::size_t k = 0; k < weights_.size(); ++k) {
    const double resp = std::exp(log_terms[k] - lse);
    if (resp == 0.0) continue;
    const double scale = sigma * resp / variances[k];
    for (int d = 0; d < dim_; ++d) eps[d] += scale * (x[d] - alpha * means_[k][d]);
  }
  for (double v : eps) {
    if (!std::isfinite(v)) throw NumericError("noise predictor produced a non-finite value");
  }
  return eps;
}

double MixtureModel::log_density(const NoiseSchedule& schedule, VecView x, double t) const {
  check_finite_input(x);
  std::vector<double> log_terms;
  std::vector<double> variances;
  double alpha = 0.0;
  component_log_terms(schedule, x, t, log_terms, variances, alpha);
  const double lse = log_sum_exp(log_terms);
  if (std::isnan(lse) || lse == std::numeric_limits<double>::infinity()) {
    throw NumericError("log-density is not finite");
  }
  return lse;
}

MixtureModel synthesize_mixture(const ConditionSpec& condition, int dim, int components) {
  if (dim < 1) throw ConfigError("mixture dimension must be positive");
  if (components < 0) throw ConfigError("component count must be non-negative");
  Rng rng = Rng::stream(static_cast<std::uint64_t>(condition.condition_id),
                        {condition.generator_seed, kSynthesisRuleVersion});
  const int k_drawn = 2 + static_cast<int>(rng.below(4));
  const int k = components > 0 ? components : k_drawn;
  std::vector<Vec> means(static_cast<std::size_t>(k), Vec(static_cast<std::size_t>(dim)));
  std::vector<double> stds(static_cast<std::size_t>(k));
  std::vector<double> weights(static_cast<std::size_t>(k));
  for (auto& mu : means) {
    for (auto& v : mu) v = rng.uniform(-4.0, 4.0);
  }
  for (auto& s : stds) s = rng.uniform(0.3, 1.0);
  for (auto& w : weights) w = rng.gamma(1.0);
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (auto& w : weights) w /= total;
  // Put the rounding residue on the largest weight so the sum is 1 to an ulp.
  const double residue = 1.0 - std::accumulate(weights.begin(), weights.end(), 0.0);
  *std::max_element(weights.begin(), weights.end()) += residue;
  return MixtureModel(std::move(weights), std::move(means), std::move(stds));
}

void to_json(Json& j, const MixtureModel& m) {
  j = Json::object();
  j["dim"] = m.dim();
  j["weights"] = m.weights();
  j["means"] = m.means();
  j["stds"] = m.stds();
}

MixtureModel mixture_from_json(const Json& j) {
  try {
    auto model = MixtureModel(j.at("weights").get<std::vector<double>>(),
                              j.at("means").get<std::vector<Vec>>(),
                              j.at("stds").get<std::vector<double>>());
    if (model.dim() != j.at("dim").get<int>()) {
      throw ParseError("mixture: 'dim' disagrees with the mean vectors");
    }
    return model;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("mixture: ") + e.what());
  } catch (const ContractError& e) {
    throw ParseError(std::string("mixture: ") + e.what());
  }
}

Json testbed_to_json(const NoiseSchedule& schedule, const MixtureModel& model) {
  Json j = schedule;
  Json m = model;
  for (auto& [key, value] : m.items()) j[key] = value;
  return j;
}

}  // namespace pflab
