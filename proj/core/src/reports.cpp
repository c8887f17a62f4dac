#include "hdexpit/reports.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace hdexpit {

namespace {
constexpr const char* kReportFormat = "hdexpit-report-1";

std::string csv_header_comment() { return std::string("# ") + kReportFormat + "\n"; }

json state_to_json(const EnvState& s) {
    const auto f = state_to_floats(s);
    json a = json::array();
    for (float v : f) a.push_back(v);
    return a;
}

EnvState state_from_json(const json& a) {
    std::array<float, 11> f{};
    for (int i = 0; i < 11; ++i) f[i] = a.at(i).get<float>();
    return state_from_floats(f);
}

}  // namespace

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw IntegrityError("cannot write " + path);
    f << content;
}

std::string mtlc_report_json(const MtlcReport& rep) {
    json j;
    j["format"] = kReportFormat;
    j["mean_sr"] = rep.mean_sr;
    j["num_settings"] = rep.num_settings;
    j["seed"] = rep.seed;
    j["per_task_sr"] = rep.per_task_sr;
    return j.dump(2) + "\n";
}

std::string mtlc_report_csv(const MtlcReport& rep) {
    std::ostringstream os;
    os << csv_header_comment() << "task,success_rate\n";
    for (const auto& [task, sr] : rep.per_task_sr) os << task << "," << sr << "\n";
    os << "__mean__," << rep.mean_sr << "\n";
    return os.str();
}

std::string chain_report_json(const ChainReport& rep) {
    json j;
    j["format"] = kReportFormat;
    j["counts"] = rep.counts;
    j["avg_len"] = rep.avg_len;
    j["num_chains"] = rep.num_chains;
    return j.dump(2) + "\n";
}

std::string chain_report_csv(const ChainReport& rep) {
    std::ostringstream os;
    os << csv_header_comment() << "consecutive_tasks,fraction\n";
    for (std::size_t k = 0; k < rep.counts.size(); ++k)
        os << (k + 1) << "," << rep.counts[k] << "\n";
    os << "avg_len," << rep.avg_len << "\n";
    return os.str();
}

std::string cross_eval_csv(const CrossEvalMatrix& m) {
    std::ostringstream os;
    os << csv_header_comment() << "ll\\hl";
    for (const auto& h : m.hl_ids) os << "," << h;
    os << "\n";
    for (std::size_t r = 0; r < m.ll_ids.size(); ++r) {
        os << m.ll_ids[r];
        for (std::size_t c = 0; c < m.hl_ids.size(); ++c)
            os << "," << m.at(static_cast<int>(r), static_cast<int>(c)).avg_len;
        os << "\n";
    }
    return os.str();
}

std::string diversity_json(const DiversityReport& rep) {
    json j;
    j["format"] = kReportFormat;
    j["zero_spread"] = rep.zero_spread;
    j["variance_explained"] = rep.variance_explained;
    j["hull_area"] = rep.hull_area;
    return j.dump(2) + "\n";
}

std::string diversity_csv(const DiversityReport& rep) {
    std::ostringstream os;
    os << csv_header_comment() << "pc1,pc2,origin\n";
    for (std::size_t i = 0; i < rep.projected.size(); ++i) {
        const char* o = rep.origins[i] == ContextOrigin::env_reset ? "env_reset"
                        : rep.origins[i] == ContextOrigin::expert_replayed
                            ? "expert_replayed"
                            : "none";
        os << rep.projected[i][0] << "," << rep.projected[i][1] << "," << o << "\n";
    }
    return os.str();
}

std::string timing_csv(const std::vector<TimingRow>& rows) {
    std::ostringstream os;
    os << csv_header_comment() << "config,sec_per_action,mean_sr,actions\n";
    for (const auto& r : rows)
        os << r.label << "," << r.sec_per_action << "," << r.mean_sr << "," << r.actions
           << "\n";
    return os.str();
}

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars,
                          double y_max) {
    const int W = 80 * std::max<std::size_t>(1, bars.size()) + 80, H = 320;
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
       << "'>\n<text x='10' y='20' font-size='14'>" << title << "</text>\n";
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const double frac = y_max > 0 ? std::min(1.0, bars[i].second / y_max) : 0.0;
        const int bh = static_cast<int>(frac * 240);
        os << "<rect x='" << (60 + 80 * i) << "' y='" << (280 - bh)
           << "' width='56' height='" << bh << "' fill='#4878c0'/>\n";
        os << "<text x='" << (60 + 80 * i) << "' y='298' font-size='10'>" << bars[i].first
           << "</text>\n";
        os << "<text x='" << (60 + 80 * i) << "' y='" << (272 - bh)
           << "' font-size='10'>" << bars[i].second << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string svg_scatter(const std::string& title,
                        const std::vector<std::array<double, 2>>& pts,
                        const std::vector<int>& cls,
                        const std::vector<std::string>& class_names) {
    double lo_x = 1e9, hi_x = -1e9, lo_y = 1e9, hi_y = -1e9;
    for (const auto& p : pts) {
        lo_x = std::min(lo_x, p[0]);
        hi_x = std::max(hi_x, p[0]);
        lo_y = std::min(lo_y, p[1]);
        hi_y = std::max(hi_y, p[1]);
    }
    if (pts.empty() || hi_x <= lo_x) {
        lo_x = -1;
        hi_x = 1;
    }
    if (pts.empty() || hi_y <= lo_y) {
        lo_y = -1;
        hi_y = 1;
    }
    static const char* colors[] = {"#4878c0", "#c05848", "#48a058", "#a048a0"};
    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='480' height='420'>\n"
       << "<text x='10' y='18' font-size='14'>" << title << "</text>\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double x = 30 + 420 * (pts[i][0] - lo_x) / (hi_x - lo_x);
        const double y = 390 - 350 * (pts[i][1] - lo_y) / (hi_y - lo_y);
        os << "<circle cx='" << x << "' cy='" << y << "' r='2.5' fill='"
           << colors[cls[i] % 4] << "' fill-opacity='0.6'/>\n";
    }
    for (std::size_t c = 0; c < class_names.size(); ++c) {
        os << "<circle cx='" << (40 + 130 * c) << "' cy='405' r='4' fill='" << colors[c % 4]
           << "'/><text x='" << (48 + 130 * c) << "' y='409' font-size='11'>"
           << class_names[c] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_plan_png(const std::string& path, const Plan& plan, int upscale) {
    const int fw = plan.w * upscale, fh = plan.h * upscale;
    const int W = fw * plan.frames + (plan.frames - 1) * 2, H = fh;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(W) * H * 3, 255);
    for (int f = 0; f < plan.frames; ++f) {
        const auto fr = plan.frame(f);
        const int x0 = f * (fw + 2);
        for (int y = 0; y < fh; ++y)
            for (int x = 0; x < fw; ++x) {
                const int sy = y / upscale, sx = x / upscale;
                for (int c = 0; c < 3; ++c) {
                    float v = fr[(c * plan.h + sy) * plan.w + sx];
                    v = std::min(1.f, std::max(0.f, v));
                    rgb[(static_cast<std::size_t>(y) * W + x0 + x) * 3 + c] =
                        static_cast<std::uint8_t>(std::lround(v * 255.f));
                }
            }
    }
    write_png_rgb8(path, W, H, rgb);
}

void save_settings_json(const std::vector<Context>& settings, const TaskRegistry& reg,
                        const std::string& path) {
    json arr = json::array();
    for (const auto& ctx : settings) {
        json e;
        e["state"] = state_to_json(ctx.initial_state);
        e["task"] = reg.at(ctx.task).id;
        e["goal_id"] = ctx.goal_id;
        e["origin"] = ctx.origin == ContextOrigin::expert_replayed ? "expert_replayed"
                                                                   : "env_reset";
        arr.push_back(e);
    }
    json j;
    j["format"] = kReportFormat;
    j["settings"] = arr;
    write_text_file(path, j.dump(2) + "\n");
}

std::vector<Context> load_settings_json(const TaskRegistry& reg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IntegrityError("cannot read settings " + path);
    json j;
    f >> j;
    std::vector<Context> out;
    for (const auto& e : j.at("settings")) {
        Context ctx;
        ctx.initial_state = state_from_json(e.at("state"));
        ctx.task = reg.index_of(e.at("task").get<std::string>());
        ctx.goal_id = e.at("goal_id").get<int>();
        ctx.origin = e.at("origin") == "expert_replayed" ? ContextOrigin::expert_replayed
                                                         : ContextOrigin::env_reset;
        out.push_back(ctx);
    }
    return out;
}

void save_chains_json(const std::vector<Chain>& chains, const std::string& path) {
    json arr = json::array();
    for (const auto& c : chains) {
        json e;
        e["s0"] = state_to_json(c.s0);
        json steps = json::array();
        for (const auto& s : c.steps) steps.push_back({{"task", s.task}, {"goal_id", s.goal_id}});
        e["steps"] = steps;
        arr.push_back(e);
    }
    json j;
    j["format"] = kReportFormat;
    j["chains"] = arr;
    write_text_file(path, j.dump() + "\n");
}

std::vector<Chain> load_chains_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IntegrityError("cannot read chains " + path);
    json j;
    f >> j;
    std::vector<Chain> out;
    for (const auto& e : j.at("chains")) {
        Chain c;
        c.s0 = state_from_json(e.at("s0"));
        for (const auto& s : e.at("steps"))
            c.steps.push_back({s.at("task").get<int>(), s.at("goal_id").get<int>()});
        out.push_back(c);
    }
    return out;
}

}  // namespace hdexpit
