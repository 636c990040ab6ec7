#include "pflab/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pflab/errors.hpp"
#include "pflab/parallel.hpp"
#include "pflab/rng.hpp"

namespace pflab {

OfflineDataset::OfflineDataset(DatasetInfo info, std::vector<DatasetEntry> entries)
    : info_(std::move(info)), entries_(std::move(entries)) {
  if (entries_.empty()) throw ContractError("dataset needs at least one entry");
  for (const auto& e : entries_) {
    if (static_cast<int>(e.z.size()) != info_.dim || static_cast<int>(e.x_gt.size()) != info_.dim) {
      throw ContractError("dataset entry dimension does not match dataset info");
    }
    const auto key = std::make_pair(e.condition.condition_id, e.condition.generator_seed);
    if (!models_.contains(key)) {
      models_.emplace(key, synthesize_mixture(e.condition, info_.dim, info_.components));
    }
  }
}

const MixtureModel& OfflineDataset::model(const ConditionSpec& condition) const {
  const auto it = models_.find({condition.condition_id, condition.generator_seed});
  if (it == models_.end()) throw ContractError("condition not present in dataset");
  return it->second;
}

const MixtureModel& OfflineDataset::model(const DatasetEntry& entry) const {
  return model(entry.condition);
}

OfflineDataset OfflineDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > entries_.size()) throw ContractError("invalid dataset slice");
  return OfflineDataset(info_, std::vector<DatasetEntry>(entries_.begin() + begin,
                                                         entries_.begin() + end));
}

std::vector<DatasetRequest> dataset_requests(std::size_t count, std::int64_t first_condition,
                                             int num_conditions, std::uint64_t seed_base) {
  if (num_conditions < 1) throw ConfigError("need at least one condition");
  std::vector<DatasetRequest> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back({first_condition + static_cast<std::int64_t>(k % num_conditions),
                   seed_base + k});
  }
  return out;
}

OfflineDataset build_dataset(const std::vector<DatasetRequest>& requests, const DatasetInfo& info,
                             int threads) {
  if (requests.empty()) throw ConfigError("build_dataset: empty request list");
  std::vector<DatasetEntry> entries(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    entries[i].condition = {requests[i].condition_id, info.generator_seed};
    entries[i].noise_seed = requests[i].noise_seed;
  }
  // Synthesize every mixture up front so workers only read.
  std::map<std::int64_t, MixtureModel> models;
  for (const auto& r : requests) {
    if (!models.contains(r.condition_id)) {
      models.emplace(r.condition_id,
                     synthesize_mixture({r.condition_id, info.generator_seed}, info.dim,
                                        info.components));
    }
  }
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    auto& e = entries[i];
    e.z = sample_prior(e.noise_seed, info.dim);
    try {
      const auto ref =
          reference_solution(models.at(e.condition.condition_id), info.schedule, e.z, info.reference);
      e.x_gt = ref.x;
      e.ref_nfe = ref.nfe;
    } catch (const Error& err) {
      throw NumericError("dataset entry " + std::to_string(i) + ": " + err.what());
    }
  });
  return OfflineDataset(info, std::move(entries));
}

Json dataset_info_to_json(const DatasetInfo& info) {
  Json j = Json::object();
  j["schedule"] = info.schedule;
  j["dim"] = info.dim;
  j["components"] = info.components;
  j["generator_seed"] = info.generator_seed;
  j["rule_version"] = info.rule_version;
  j["reference"] = {{"method", "dopri5-log-noise"},
                    {"rel_tol", info.reference.rel_tol},
                    {"abs_tol", info.reference.abs_tol}};
  return j;
}

DatasetInfo dataset_info_from_json(const Json& j) {
  try {
    DatasetInfo info;
    info.schedule = schedule_from_json(j.at("schedule"));
    info.dim = j.at("dim").get<int>();
    info.components = j.at("components").get<int>();
    info.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    info.rule_version = j.at("rule_version").get<int>();
    if (info.rule_version != kSynthesisRuleVersion) {
      throw ParseError("dataset was built with synthesis rule version " +
                       std::to_string(info.rule_version));
    }
    info.reference.rel_tol = j.at("reference").at("rel_tol").get<double>();
    info.reference.abs_tol = j.at("reference").at("abs_tol").get<double>();
    return info;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("dataset manifest: ") + e.what());
  }
}

std::string manifest_path(const std::string& dataset_path) {
  return dataset_path + ".manifest.json";
}

void write_dataset(const std::string& path, const OfflineDataset& dataset,
                   const Json& extra_manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& e : dataset.entries()) {
    Json rec = Json::object();
    rec["condition_id"] = e.condition.condition_id;
    rec["noise_seed"] = e.noise_seed;
    rec["z"] = e.z;
    rec["x_gt"] = e.x_gt;
    rec["ref_nfe"] = e.ref_nfe;
    out << rec.dump() << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
  Json manifest = Json::object();
  manifest["format"] = "pflab-dataset";
  manifest["version"] = 1;
  manifest["entries"] = dataset.size();
  manifest["info"] = dataset_info_to_json(dataset.info());
  for (auto& [key, value] : extra_manifest.items()) manifest[key] = value;
  std::ofstream mout(manifest_path(path), std::ios::binary | std::ios::trunc);
  if (!mout) throw IoError("cannot open '" + manifest_path(path) + "' for writing");
  mout << manifest.dump(2) << '\n';
  if (!mout) throw IoError("failed writing '" + manifest_path(path) + "'");
}

OfflineDataset load_dataset(const std::string& path) {
  std::ifstream min(manifest_path(path), std::ios::binary);
  if (!min) throw IoError("cannot open dataset manifest '" + manifest_path(path) + "'");
  Json manifest;
  try {
    manifest = Json::parse(min);
  } catch (const Json::parse_error& e) {
    throw ParseError("dataset manifest: invalid JSON at byte " + std::to_string(e.byte));
  }
  if (!manifest.is_object() || !manifest.contains("info")) {
    throw ParseError("dataset manifest: missing /info");
  }
  const DatasetInfo info = dataset_info_from_json(manifest.at("info"));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::vector<DatasetEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json rec = Json::parse(line);
      DatasetEntry e;
      e.condition = {rec.at("condition_id").get<std::int64_t>(), info.generator_seed};
      e.noise_seed = rec.at("noise_seed").get<std::uint64_t>();
      e.z = rec.at("z").get<Vec>();
      e.x_gt = rec.at("x_gt").get<Vec>();
      e.ref_nfe = rec.at("ref_nfe").get<int>();
      entries.push_back(std::move(e));
    } catch (const Json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (entries.empty()) throw ParseError(path + ": dataset has no records");
  try {
    return OfflineDataset(info, std::move(entries));
  } catch (const ContractError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace pflab
