#include "hdexpit/schedule.hpp"

#include <cmath>
#include <sstream>

#include "hdexpit/rng.hpp"

namespace hdexpit {

namespace {

constexpr double kAlphaBarHi = 0.9985;  // alpha_0 = 0.99925 >= 0.999
constexpr double kAlphaBarLo = 5e-4;    // beta_{J-1} = 0.99975 >= 0.999

double cosine_shape(double u) {
    constexpr double s = 0.008;
    double a = std::cos(1.5707963267948966 * (u + s) / (1.0 + s));
    return a * a;
}

}  // namespace

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "linear") return ScheduleKind::linear;
    throw ConfigError("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::cosine ? "cosine" : "linear";
}

NoiseSchedule NoiseSchedule::make(ScheduleKind kind, int steps) {
    if (steps < 2) throw ConfigError("noise schedule needs at least 2 steps");
    std::vector<double> abar(steps);
    const double f0 = cosine_shape(0.0), f1 = cosine_shape(1.0);
    for (int j = 0; j < steps; ++j) {
        double u = static_cast<double>(j) / (steps - 1);
        double w = kind == ScheduleKind::cosine
                       ? (cosine_shape(u) - f1) / (f0 - f1)  // 1 -> 0
                       : 1.0 - u;
        abar[j] = kAlphaBarLo + (kAlphaBarHi - kAlphaBarLo) * w;
    }
    return from_alpha_bar(std::move(abar));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
    if (alpha_bar.size() < 2) throw ConfigError("noise schedule needs at least 2 steps");
    NoiseSchedule s;
    s.alpha_bar_ = std::move(alpha_bar);
    const int n = static_cast<int>(s.alpha_bar_.size());
    s.alpha_.resize(n);
    s.beta_.resize(n);
    for (int j = 0; j < n; ++j) {
        double ab = s.alpha_bar_[j];
        if (!(ab > 0.0) || !(ab < 1.0))
            throw ConfigError("alpha_bar must lie strictly inside (0, 1)");
        if (j > 0 && !(ab < s.alpha_bar_[j - 1]))
            throw ConfigError("alpha_bar must be strictly decreasing");
        s.alpha_[j] = std::sqrt(ab);
        s.beta_[j] = std::sqrt(1.0 - ab);
    }
    if (s.alpha_[0] < 0.999)
        throw ConfigError("schedule must start near-clean: alpha[0] >= 0.999");
    if (s.beta_[n - 1] < 0.999)
        throw ConfigError("schedule must end near pure noise: beta[J-1] >= 0.999");
    return s;
}

std::string NoiseSchedule::to_json() const {
    std::ostringstream os;
    os.precision(17);
    os << "{\"steps\":" << steps() << ",\"alpha\":[";
    for (int j = 0; j < steps(); ++j) os << (j ? "," : "") << alpha_[j];
    os << "],\"beta\":[";
    for (int j = 0; j < steps(); ++j) os << (j ? "," : "") << beta_[j];
    os << "]}";
    return os.str();
}

std::uint64_t NoiseSchedule::digest() const {
    return fnv1a64(alpha_bar_.data(), alpha_bar_.size() * sizeof(double));
}

}  // namespace hdexpit
