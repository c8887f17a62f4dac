#include "hdexpit/dataset.hpp"

namespace hdexpit {

AggregationStrategy strategy_from_string(const std::string& s) {
    if (s == "merge") return AggregationStrategy::merge;
    if (s == "replace") return AggregationStrategy::replace;
    throw ConfigError("unknown aggregation strategy: " + s);
}

std::string to_string(AggregationStrategy s) {
    return s == AggregationStrategy::merge ? "merge" : "replace";
}

void Dataset::add(Trajectory t) {
    if (!t.success)
        throw IntegrityError("datasets hold successful trajectories only (task " + t.task_id +
                             ")");
    if (t.observations.size() != t.states.size() ||
        t.states.size() != t.actions.size() + 1)
        throw IntegrityError("trajectory length bookkeeping broken for task " + t.task_id);
    const std::size_t want =
        static_cast<std::size_t>(3) * meta_.obs_h * meta_.obs_w;
    for (const auto& o : t.observations)
        if (o.size() != want)
            throw IntegrityError("observation shape mismatch in dataset add");
    counts_[t.task_id] += 1;
    trajs_.push_back(std::move(t));
}

int Dataset::per_task_count(const std::string& task_id) const {
    auto it = counts_.find(task_id);
    return it == counts_.end() ? 0 : it->second;
}

std::uint64_t Dataset::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& t : trajs_) {
        const auto bytes = trajectory_record_bytes(t, meta_.obs_h, meta_.obs_w);
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    for (const auto& [task, n] : counts_) {
        h = fnv1a64(task.data(), task.size(), h);
        h = fnv1a64(&n, sizeof(n), h);
    }
    return h;
}

Dataset aggregate(const Dataset& current, const Dataset& collected,
                  AggregationStrategy strategy) {
    if (current.meta().env_digest != collected.meta().env_digest)
        throw ConfigError("cannot aggregate datasets with different env digests");
    for (const auto* d : {&current, &collected})
        for (const auto& t : d->trajectories())
            if (!t.success)
                throw IntegrityError("aggregate saw a non-successful trajectory");

    DatasetMeta meta = collected.meta();
    meta.parents = {current.digest(), collected.digest()};
    meta.strategy = to_string(strategy);
    Dataset out(meta);
    if (strategy == AggregationStrategy::merge) {
        for (const auto& t : current.trajectories()) out.add(t);
    }
    for (const auto& t : collected.trajectories()) out.add(t);
    return out;
}

}  // namespace hdexpit
