#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "hdexpit/dataset.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace hdexpit {

namespace {

constexpr const char* kFormat = "hdexpit-ds-1";

std::string origin_name(TrajOrigin o) {
    switch (o) {
        case TrajOrigin::expert: return "expert";
        case TrajOrigin::collected: return "collected";
        case TrajOrigin::evaluation: return "evaluation";
    }
    return "expert";
}

TrajOrigin origin_from(const std::string& s) {
    if (s == "expert") return TrajOrigin::expert;
    if (s == "collected") return TrajOrigin::collected;
    if (s == "evaluation") return TrajOrigin::evaluation;
    throw IntegrityError("unknown trajectory origin: " + s);
}

std::string ctx_origin_name(ContextOrigin o) {
    switch (o) {
        case ContextOrigin::none: return "none";
        case ContextOrigin::env_reset: return "env_reset";
        case ContextOrigin::expert_replayed: return "expert_replayed";
    }
    return "none";
}

ContextOrigin ctx_origin_from(const std::string& s) {
    if (s == "none") return ContextOrigin::none;
    if (s == "env_reset") return ContextOrigin::env_reset;
    if (s == "expert_replayed") return ContextOrigin::expert_replayed;
    throw IntegrityError("unknown context origin: " + s);
}

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

std::string traj_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "traj_%06d.bin", index);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    return std::strtoull(s.c_str(), nullptr, 16);
}

}  // namespace

std::vector<std::uint8_t> trajectory_record_bytes(const Trajectory& t, int obs_h, int obs_w) {
    const int n_states = static_cast<int>(t.states.size());
    const int n_actions = static_cast<int>(t.actions.size());
    json header;
    header["states_shape"] = {n_states, 11};
    header["actions_shape"] = {n_actions, 3};
    header["obs_shape"] = {n_states, 3, obs_h, obs_w};
    header["dtypes"] = {{"states", "float32"}, {"actions", "float32"},
                        {"observations", "uint8"}};
    header["task_id"] = t.task_id;
    header["goal_id"] = t.goal_id;
    header["success"] = t.success;
    header["origin"] = origin_name(t.origin);
    header["context_origin"] = ctx_origin_name(t.context_origin);
    header["step_budget"] = t.step_budget;
    const std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    std::uint8_t lenb[4] = {static_cast<std::uint8_t>(hlen & 0xff),
                            static_cast<std::uint8_t>((hlen >> 8) & 0xff),
                            static_cast<std::uint8_t>((hlen >> 16) & 0xff),
                            static_cast<std::uint8_t>((hlen >> 24) & 0xff)};
    append_bytes(out, lenb, 4);
    append_bytes(out, hs.data(), hs.size());
    for (const auto& s : t.states) {
        const auto f = state_to_floats(s);
        append_bytes(out, f.data(), f.size() * sizeof(float));
    }
    for (const auto& a : t.actions) {
        const float f[3] = {a.dx, a.dy, static_cast<float>(a.grip_cmd)};
        append_bytes(out, f, sizeof(f));
    }
    for (const auto& o : t.observations) append_bytes(out, o.data(), o.size());
    return out;
}

void save_dataset(const Dataset& d, const std::string& path) {
    fs::create_directories(path);
    const auto& meta = d.meta();

    json manifest;
    manifest["format"] = kFormat;
    manifest["env_digest"] = hex64(meta.env_digest);
    manifest["obs_h"] = meta.obs_h;
    manifest["obs_w"] = meta.obs_w;
    manifest["created_iteration"] = meta.created_iteration;
    manifest["strategy"] = meta.strategy;
    json parents = json::array();
    for (auto p : meta.parents) parents.push_back(hex64(p));
    manifest["parents"] = parents;
    json counts = json::object();
    for (const auto& [task, n] : d.counts()) counts[task] = n;
    manifest["counts"] = counts;
    json shortfall = json::object();
    for (const auto& [task, n] : meta.quota_shortfall) shortfall[task] = n;
    manifest["quota_shortfall"] = shortfall;
    manifest["digest"] = hex64(d.digest());

    json index = json::array();
    for (int i = 0; i < d.size(); ++i) {
        const auto& t = d.at(i);
        json e;
        e["file"] = traj_file_name(i);
        e["task_id"] = t.task_id;
        e["goal_id"] = t.goal_id;
        e["success"] = t.success;
        e["steps"] = t.num_actions();
        e["origin"] = origin_name(t.origin);
        e["context_origin"] = ctx_origin_name(t.context_origin);
        index.push_back(e);
    }
    manifest["trajectories"] = index;

    for (int i = 0; i < d.size(); ++i) {
        const auto bytes = trajectory_record_bytes(d.at(i), meta.obs_h, meta.obs_w);
        std::ofstream f(fs::path(path) / traj_file_name(i), std::ios::binary);
        if (!f) throw IntegrityError("cannot write trajectory record in " + path);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    }
    std::ofstream mf(fs::path(path) / "manifest.json");
    if (!mf) throw IntegrityError("cannot write manifest in " + path);
    mf << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path, std::uint64_t expected_env_digest) {
    std::ifstream mf(fs::path(path) / "manifest.json");
    if (!mf) throw IntegrityError("no manifest.json under " + path);
    json manifest;
    try {
        mf >> manifest;
    } catch (const std::exception& e) {
        throw IntegrityError(std::string("malformed manifest: ") + e.what());
    }
    if (manifest.value("format", "") != kFormat)
        throw IntegrityError("dataset format version mismatch in " + path + " (want " +
                             kFormat + ")");

    DatasetMeta meta;
    meta.env_digest = parse_hex64(manifest.at("env_digest").get<std::string>());
    meta.obs_h = manifest.at("obs_h").get<int>();
    meta.obs_w = manifest.at("obs_w").get<int>();
    meta.created_iteration = manifest.at("created_iteration").get<int>();
    meta.strategy = manifest.value("strategy", "");
    for (const auto& p : manifest.at("parents"))
        meta.parents.push_back(parse_hex64(p.get<std::string>()));
    for (const auto& [task, n] : manifest.at("quota_shortfall").items())
        meta.quota_shortfall[task] = n.get<int>();

    if (expected_env_digest != 0 && meta.env_digest != expected_env_digest)
        throw IntegrityError("dataset env digest mismatch in " + path);

    Dataset d(meta);
    const auto& index = manifest.at("trajectories");
    const std::size_t obs_bytes = static_cast<std::size_t>(3) * meta.obs_h * meta.obs_w;
    for (const auto& entry : index) {
        const std::string fname = entry.at("file").get<std::string>();
        std::ifstream f(fs::path(path) / fname, std::ios::binary);
        if (!f) throw IntegrityError("missing trajectory record " + fname);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                        std::istreambuf_iterator<char>());
        if (bytes.size() < 4) throw IntegrityError("truncated payload in " + fname);
        const std::uint32_t hlen = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) |
                                   (static_cast<std::uint32_t>(bytes[3]) << 24);
        if (bytes.size() < 4 + hlen) throw IntegrityError("truncated payload in " + fname);
        json header;
        try {
            header = json::parse(bytes.begin() + 4, bytes.begin() + 4 + hlen);
        } catch (const std::exception& e) {
            throw IntegrityError(std::string("malformed record header: ") + e.what());
        }
        const int n_states = header.at("states_shape")[0].get<int>();
        const int n_actions = header.at("actions_shape")[0].get<int>();
        const auto& os = header.at("obs_shape");
        if (os[1].get<int>() != 3 || os[2].get<int>() != meta.obs_h ||
            os[3].get<int>() != meta.obs_w)
            throw IntegrityError("observation shape mismatch in " + fname);

        const std::size_t need = 4 + hlen +
                                 static_cast<std::size_t>(n_states) * 11 * sizeof(float) +
                                 static_cast<std::size_t>(n_actions) * 3 * sizeof(float) +
                                 static_cast<std::size_t>(n_states) * obs_bytes;
        if (bytes.size() != need) throw IntegrityError("truncated payload in " + fname);

        Trajectory t;
        t.task_id = header.at("task_id").get<std::string>();
        t.goal_id = header.at("goal_id").get<int>();
        t.success = header.at("success").get<bool>();
        t.origin = origin_from(header.at("origin").get<std::string>());
        t.context_origin = ctx_origin_from(header.value("context_origin", "none"));
        t.step_budget = header.value("step_budget", 0);

        const std::uint8_t* p = bytes.data() + 4 + hlen;
        t.states.resize(n_states);
        for (int i = 0; i < n_states; ++i) {
            std::array<float, 11> fl;
            std::memcpy(fl.data(), p, sizeof(fl));
            p += sizeof(fl);
            t.states[i] = state_from_floats(fl);
        }
        t.actions.resize(n_actions);
        for (int i = 0; i < n_actions; ++i) {
            float fl[3];
            std::memcpy(fl, p, sizeof(fl));
            p += sizeof(fl);
            t.actions[i] = {fl[0], fl[1], static_cast<GripCmd>(static_cast<int>(fl[2]))};
        }
        t.observations.resize(n_states);
        for (int i = 0; i < n_states; ++i) {
            t.observations[i].assign(p, p + obs_bytes);
            p += obs_bytes;
        }
        d.add(std::move(t));
    }

    json counts = manifest.at("counts");
    for (const auto& [task, n] : counts.items())
        if (d.per_task_count(task) != n.get<int>())
            throw IntegrityError("per-task count in manifest disagrees with records for " +
                                 task);
    if (manifest.contains("digest")) {
        const auto declared = parse_hex64(manifest.at("digest").get<std::string>());
        if (declared != d.digest())
            throw IntegrityError("dataset content digest mismatch in " + path);
    }
    return d;
}

}  // namespace hdexpit
