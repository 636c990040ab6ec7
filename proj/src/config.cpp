#include "pflab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "pflab/errors.hpp"
#include "pflab/format.hpp"
#include "pflab/solvers.hpp"

namespace pflab {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<int>(key, item));
  return out;
}

std::string join_ints(const std::vector<int>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + std::to_string(items[i]);
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& name, const std::string&)> set;
};

template <typename T, typename Member>
Field number_field(std::string section, std::string key, Member member) {
  return {std::move(section), std::move(key),
          [member](const RunConfig& c) {
            const T v = member(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(v);
            } else {
              return std::to_string(v);
            }
          },
          [member](RunConfig& c, const std::string& name, const std::string& text) {
            member(c) = parse_number<T>(name, text);
          }};
}

Field optional_double_field(std::string section, std::string key,
                            std::function<std::optional<double>&(RunConfig&)> member,
                            std::string unset_word) {
  return {std::move(section), std::move(key),
          [member, unset_word](const RunConfig& c) {
            const auto& v = member(const_cast<RunConfig&>(c));
            return v ? format_double(*v) : unset_word;
          },
          [member, unset_word](RunConfig& c, const std::string& name, const std::string& text) {
            if (text == unset_word) {
              member(c).reset();
            } else {
              member(c) = parse_number<double>(name, text);
            }
          }};
}

Field string_field(std::string section, std::string key,
                   std::function<std::string&(RunConfig&)> member) {
  return {std::move(section), std::move(key),
          [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string&, const std::string& text) {
            member(c) = text;
          }};
}

#define PFLAB_MEMBER(type, expr) [](RunConfig& c) -> type& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"schedule", "kind",
                 [](const RunConfig& c) { return std::string(to_string(c.schedule.kind)); },
                 [](RunConfig& c, const std::string&, const std::string& t) {
                   c.schedule.kind = schedule_kind_from_string(t);
                 }});
    f.push_back(number_field<double>("schedule", "beta_min", PFLAB_MEMBER(double, schedule.beta_min)));
    f.push_back(number_field<double>("schedule", "beta_max", PFLAB_MEMBER(double, schedule.beta_max)));
    f.push_back(optional_double_field("schedule", "t_min",
                                      PFLAB_MEMBER(std::optional<double>, schedule.t_min), "auto"));
    f.push_back(optional_double_field("schedule", "t_max",
                                      PFLAB_MEMBER(std::optional<double>, schedule.t_max), "auto"));

    f.push_back(number_field<int>("model", "dim", PFLAB_MEMBER(int, model.dim)));
    f.push_back(number_field<int>("model", "components", PFLAB_MEMBER(int, model.components)));
    f.push_back(number_field<std::uint64_t>("model", "generator_seed",
                                            PFLAB_MEMBER(std::uint64_t, model.generator_seed)));

    f.push_back(number_field<std::size_t>("data", "size", PFLAB_MEMBER(std::size_t, data.size)));
    f.push_back(number_field<std::int64_t>("data", "first_condition",
                                           PFLAB_MEMBER(std::int64_t, data.first_condition)));
    f.push_back(number_field<int>("data", "num_conditions", PFLAB_MEMBER(int, data.num_conditions)));
    f.push_back(number_field<std::uint64_t>("data", "noise_seed_base",
                                            PFLAB_MEMBER(std::uint64_t, data.noise_seed_base)));
    f.push_back(number_field<double>("data", "ref_rel_tol", PFLAB_MEMBER(double, data.ref_rel_tol)));
    f.push_back(number_field<double>("data", "ref_abs_tol", PFLAB_MEMBER(double, data.ref_abs_tol)));
    f.push_back(number_field<std::size_t>("data", "holdout", PFLAB_MEMBER(std::size_t, data.holdout)));

    f.push_back({"grid", "kind", [](const RunConfig& c) { return std::string(to_string(c.grid.kind)); },
                 [](RunConfig& c, const std::string&, const std::string& t) {
                   c.grid.kind = grid_kind_from_string(t);
                 }});
    f.push_back(number_field<int>("grid", "steps", PFLAB_MEMBER(int, grid.steps)));

    f.push_back(string_field("solver", "id", PFLAB_MEMBER(std::string, solver.id)));
    f.push_back(number_field<int>("solver", "order", PFLAB_MEMBER(int, solver.order)));
    f.push_back(number_field<int>("solver", "width", PFLAB_MEMBER(int, solver.width)));
    f.push_back(number_field<int>("solver", "depth", PFLAB_MEMBER(int, solver.depth)));
    f.push_back({"solver", "sum_to_one",
                 [](const RunConfig& c) { return std::string(c.solver.sum_to_one ? "true" : "false"); },
                 [](RunConfig& c, const std::string& n, const std::string& t) {
                   c.solver.sum_to_one = parse_bool(n, t);
                 }});
    f.push_back(string_field("solver", "init", PFLAB_MEMBER(std::string, solver.init)));
    f.push_back(number_field<double>("solver", "log_std_init", PFLAB_MEMBER(double, solver.log_std_init)));

    f.push_back(number_field<double>("ppo", "clip_eps", PFLAB_MEMBER(double, ppo.clip_eps)));
    f.push_back(number_field<double>("ppo", "learning_rate", PFLAB_MEMBER(double, ppo.learning_rate)));
    f.push_back(number_field<int>("ppo", "iterations", PFLAB_MEMBER(int, ppo.iterations)));
    f.push_back(number_field<int>("ppo", "batch", PFLAB_MEMBER(int, ppo.batch)));
    f.push_back(number_field<int>("ppo", "ppo_epochs", PFLAB_MEMBER(int, ppo.ppo_epochs)));
    f.push_back(number_field<double>("ppo", "adv_delta", PFLAB_MEMBER(double, ppo.adv_delta)));
    f.push_back({"ppo", "reward", [](const RunConfig& c) { return std::string(to_string(c.ppo.reward)); },
                 [](RunConfig& c, const std::string&, const std::string& t) {
                   c.ppo.reward = reward_kind_from_string(t);
                 }});
    f.push_back({"ppo", "batch_mode",
                 [](const RunConfig& c) { return std::string(to_string(c.ppo.batch_mode)); },
                 [](RunConfig& c, const std::string&, const std::string& t) {
                   c.ppo.batch_mode = batch_mode_from_string(t);
                 }});
    f.push_back(number_field<int>("ppo", "checkpoint_every", PFLAB_MEMBER(int, ppo.checkpoint_every)));
    f.push_back(number_field<double>("ppo", "adam_beta1", PFLAB_MEMBER(double, ppo.adam_beta1)));
    f.push_back(number_field<double>("ppo", "adam_beta2", PFLAB_MEMBER(double, ppo.adam_beta2)));
    f.push_back(number_field<double>("ppo", "adam_eps", PFLAB_MEMBER(double, ppo.adam_eps)));

    f.push_back(number_field<double>("distill", "ridge_lambda", PFLAB_MEMBER(double, distill.ridge_lambda)));

    f.push_back({"eval", "metrics", [](const RunConfig& c) { return join(c.eval.metrics); },
                 [](RunConfig& c, const std::string&, const std::string& t) {
                   c.eval.metrics = split_list(t);
                 }});
    f.push_back({"eval", "k_list", [](const RunConfig& c) { return join_ints(c.eval.k_list); },
                 [](RunConfig& c, const std::string& n, const std::string& t) {
                   c.eval.k_list = parse_int_list(n, t);
                 }});
    f.push_back({"eval", "solvers", [](const RunConfig& c) { return join(c.eval.solvers); },
                 [](RunConfig& c, const std::string&, const std::string& t) {
                   c.eval.solvers = split_list(t);
                 }});
    f.push_back({"eval", "order_k_list", [](const RunConfig& c) { return join_ints(c.eval.order_k_list); },
                 [](RunConfig& c, const std::string& n, const std::string& t) {
                   c.eval.order_k_list = parse_int_list(n, t);
                 }});
    f.push_back(number_field<int>("eval", "order_samples", PFLAB_MEMBER(int, eval.order_samples)));
    f.push_back(optional_double_field("eval", "tau", PFLAB_MEMBER(std::optional<double>, eval.tau),
                                      "percentile"));
    f.push_back(number_field<double>("eval", "tau_percentile", PFLAB_MEMBER(double, eval.tau_percentile)));
    f.push_back(number_field<int>("eval", "max_attempts", PFLAB_MEMBER(int, eval.max_attempts)));
    f.push_back(string_field("eval", "preview_solver", PFLAB_MEMBER(std::string, eval.preview_solver)));
    f.push_back(number_field<int>("eval", "preview_steps", PFLAB_MEMBER(int, eval.preview_steps)));
    f.push_back(string_field("eval", "full_solver", PFLAB_MEMBER(std::string, eval.full_solver)));
    f.push_back(number_field<int>("eval", "full_steps", PFLAB_MEMBER(int, eval.full_steps)));
    f.push_back(number_field<std::size_t>("eval", "sessions", PFLAB_MEMBER(std::size_t, eval.sessions)));

    f.push_back(string_field("io", "out_dir", PFLAB_MEMBER(std::string, io.out_dir)));
    f.push_back(string_field("io", "data", PFLAB_MEMBER(std::string, io.data)));
    f.push_back(string_field("io", "policy", PFLAB_MEMBER(std::string, io.policy)));
    f.push_back(string_field("io", "coeffs", PFLAB_MEMBER(std::string, io.coeffs)));
    f.push_back(number_field<std::uint64_t>("io", "seed", PFLAB_MEMBER(std::uint64_t, io.seed)));
    f.push_back(number_field<int>("io", "threads", PFLAB_MEMBER(int, io.threads)));
    return f;
  }();
  return table;
}

#undef PFLAB_MEMBER

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

NoiseSchedule RunConfig::make_schedule() const {
  if (schedule.kind == ScheduleKind::kVpLinear) {
    return NoiseSchedule::vp_linear(schedule.beta_min, schedule.beta_max,
                                    schedule.t_min.value_or(1e-3), schedule.t_max.value_or(1.0));
  }
  return NoiseSchedule::rectified_flow(schedule.t_min.value_or(1e-3),
                                       schedule.t_max.value_or(1.0 - 1e-3));
}

ReferenceOptions RunConfig::reference_options() const {
  ReferenceOptions opts;
  opts.rel_tol = data.ref_rel_tol;
  opts.abs_tol = data.ref_abs_tol;
  return opts;
}

DatasetInfo RunConfig::dataset_info() const {
  DatasetInfo info;
  info.schedule = make_schedule();
  info.dim = model.dim;
  info.components = model.components;
  info.generator_seed = model.generator_seed;
  info.reference = reference_options();
  return info;
}

PolicyShape RunConfig::policy_shape() const {
  PolicyShape shape;
  shape.order = solver.order;
  shape.width = solver.width;
  shape.depth = solver.depth;
  shape.sum_to_one = solver.sum_to_one;
  return shape;
}

PPOConfig RunConfig::ppo_config() const {
  PPOConfig c = ppo;
  c.seed = io.seed;
  c.threads = io.threads;
  return c;
}

void RunConfig::validate() const {
  try {
    (void)make_schedule();
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  if (model.dim < 1) throw ConfigError("model.dim must be >= 1");
  if (model.components < 0) throw ConfigError("model.components must be >= 0");
  if (data.num_conditions < 1) throw ConfigError("data.num_conditions must be >= 1");
  if (!(data.ref_rel_tol > 0.0) || !(data.ref_abs_tol > 0.0)) {
    throw ConfigError("data reference tolerances must be positive");
  }
  if (grid.steps < 1) throw ConfigError("grid.steps must be >= 1");
  if (solver.order < 1 || solver.order > 4) throw ConfigError("solver.order must be in 1..4");
  if (solver.sum_to_one && solver.order < 2) {
    throw ConfigError("solver.sum_to_one needs solver.order >= 2");
  }
  if (solver.width < 1 || solver.depth < 0) throw ConfigError("solver.width/depth out of range");
  if (solver.init != "ddim" && solver.init.rfind("ab", 0) != 0) {
    throw ConfigError("solver.init must be ddim or ab<m>");
  }
  try {
    ppo_config().validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("ppo: ") + e.what());
  }
  if (distill.ridge_lambda < 0.0) throw ConfigError("distill.ridge_lambda must be >= 0");
  for (const auto& m : eval.metrics) (void)reward_kind_from_string(m);
  if (eval.max_attempts < 1) throw ConfigError("eval.max_attempts must be >= 1");
  if (eval.preview_steps < 1 || eval.full_steps < 1) throw ConfigError("eval steps must be >= 1");
  if (eval.order_samples < 1) throw ConfigError("eval.order_samples must be >= 1");
  if (io.threads < 1) throw ConfigError("io.threads must be >= 1");
}

void set_config_value(RunConfig& config, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos) throw ConfigError("config key must be section.key: " + dotted_key);
  const Field* f = find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
  if (f == nullptr) throw ConfigError("unknown config key: " + dotted_key);
  try {
    f->set(config, dotted_key, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(dotted_key + ": " + e.what());
  }
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where() + "malformed section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(),
                                     [&](const Field& f) { return f.section == section; });
      if (!known) throw ConfigError(where() + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where() + "expected key = value");
    if (section.empty()) throw ConfigError(where() + "key outside of a section");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    const std::string value = trim(std::string_view(s).substr(eq + 1));
    const std::string dotted = section + "." + key;
    if (std::find(seen.begin(), seen.end(), dotted) != seen.end()) {
      throw ConfigError(where() + "duplicate key " + dotted);
    }
    seen.push_back(dotted);
    try {
      set_config_value(config, dotted, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where() + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& f : fields()) {
    if (f.section == "io" && (f.key == "threads" || f.key == "out_dir")) continue;
    feed(f.section + "." + f.key + "=" + f.get(config) + "\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_env_overrides(RunConfig& config) {
  auto env = [](const char* name, std::string& target) {
    if (const char* v = std::getenv(name); v != nullptr && *v != '\0') target = v;
  };
  env("PFLAB_OUT_DIR", config.io.out_dir);
  env("PFLAB_DATA", config.io.data);
  env("PFLAB_POLICY", config.io.policy);
  env("PFLAB_COEFFS", config.io.coeffs);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.section + "." + f.key);
  return keys;
}

}  // namespace pflab
