#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pflab/engine.hpp"
#include "pflab/json.hpp"
#include "pflab/mixture.hpp"
#include "pflab/schedule.hpp"

namespace pflab {

struct DatasetEntry {
  ConditionSpec condition;
  std::uint64_t noise_seed = 0;
  Vec z;
  Vec x_gt;
  int ref_nfe = 0;
};

// Everything needed to regenerate a dataset entry from (condition, seed).
struct DatasetInfo {
  NoiseSchedule schedule = NoiseSchedule::vp_linear();
  int dim = 2;
  int components = 0;  // 0: drawn by the synthesis rule
  std::uint64_t generator_seed = 0;
  int rule_version = kSynthesisRuleVersion;
  ReferenceOptions reference;
};

// Fixed (condition, noise, reference output) triples.
class OfflineDataset {
 public:
  OfflineDataset(DatasetInfo info, std::vector<DatasetEntry> entries);

  const DatasetInfo& info() const { return info_; }
  const NoiseSchedule& schedule() const { return info_.schedule; }
  const std::vector<DatasetEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const DatasetEntry& operator[](std::size_t i) const { return entries_[i]; }

  // Mixture for the entry's condition (synthesized at construction).
  const MixtureModel& model(const DatasetEntry& entry) const;
  const MixtureModel& model(const ConditionSpec& condition) const;

  // Entries [begin, end) as a new dataset sharing the same info.
  OfflineDataset slice(std::size_t begin, std::size_t end) const;

 private:
  DatasetInfo info_;
  std::vector<DatasetEntry> entries_;
  std::map<std::pair<std::int64_t, std::uint64_t>, MixtureModel> models_;
};

struct DatasetRequest {
  std::int64_t condition_id;
  std::uint64_t noise_seed;
};

// `count` requests cycling over conditions first_condition..+num_conditions-1
// with noise seeds seed_base, seed_base + 1, ...
std::vector<DatasetRequest> dataset_requests(std::size_t count, std::int64_t first_condition,
                                             int num_conditions, std::uint64_t seed_base);

// z = sample_prior(noise_seed), x_gt = reference_solution(z). Reference
// failures are rethrown with the entry index.
OfflineDataset build_dataset(const std::vector<DatasetRequest>& requests, const DatasetInfo& info,
                             int threads = 1);

Json dataset_info_to_json(const DatasetInfo& info);
DatasetInfo dataset_info_from_json(const Json& j);

// Newline-delimited JSON records {condition_id, noise_seed, z, x_gt, ref_nfe}
// plus a manifest next to it (<path>.manifest.json). `extra_manifest` fields
// are merged into the manifest.
void write_dataset(const std::string& path, const OfflineDataset& dataset,
                   const Json& extra_manifest = Json::object());
OfflineDataset load_dataset(const std::string& path);
std::string manifest_path(const std::string& dataset_path);

}  // namespace pflab
