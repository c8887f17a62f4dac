#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hdexpit/env.hpp"

namespace hdexpit {

enum class AggregationStrategy { merge, replace };

AggregationStrategy strategy_from_string(const std::string& s);
std::string to_string(AggregationStrategy s);

struct DatasetMeta {
    std::string format = "hdexpit-ds-1";
    std::uint64_t env_digest = 0;
    int obs_h = 0, obs_w = 0;
    int created_iteration = 0;
    std::vector<std::uint64_t> parents;
    std::string strategy;  // empty, "merge" or "replace"
    // Per-task shortfall against a collection quota, reported not raised.
    std::map<std::string, int> quota_shortfall;
};

/// A bag of successful trajectories. Immutable after construction in all
/// multi-threaded contexts; building and aggregating are single-writer.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(DatasetMeta meta) : meta_(std::move(meta)) {}

    /// Rejects unsuccessful trajectories and observation-shape mismatches.
    void add(Trajectory t);

    int size() const { return static_cast<int>(trajs_.size()); }
    const std::vector<Trajectory>& trajectories() const { return trajs_; }
    const Trajectory& at(int i) const { return trajs_.at(i); }

    /// Exact stored count for a task; unknown ids count zero.
    int per_task_count(const std::string& task_id) const;
    const std::map<std::string, int>& counts() const { return counts_; }

    DatasetMeta& meta() { return meta_; }
    const DatasetMeta& meta() const { return meta_; }

    /// Content digest over the exact record bytes that save_dataset emits.
    std::uint64_t digest() const;

private:
    std::vector<Trajectory> trajs_;
    std::map<std::string, int> counts_;
    DatasetMeta meta_;
};

/// merge: multiset union of both inputs (duplicates kept); replace: the
/// collected set verbatim. Parent digests and the strategy are recorded.
/// Mismatched env digests raise ConfigError; any unsuccessful trajectory
/// raises IntegrityError.
Dataset aggregate(const Dataset& current, const Dataset& collected,
                  AggregationStrategy strategy);

/// Directory layout: manifest.json plus one traj_NNNNNN.bin per trajectory.
/// Each record is a 4-byte little-endian header length, a JSON header, then
/// float32 states, float32 actions and uint8 observations.
void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path, std::uint64_t expected_env_digest = 0);

/// The exact bytes of one on-disk record; shared by save and digest.
std::vector<std::uint8_t> trajectory_record_bytes(const Trajectory& t, int obs_h, int obs_w);

}  // namespace hdexpit
