#include <Eigen/Dense>
#include <algorithm>

#include "hdexpit/evals.hpp"

namespace hdexpit {

namespace {

std::string origin_key(ContextOrigin o) {
    switch (o) {
        case ContextOrigin::env_reset: return "env_reset";
        case ContextOrigin::expert_replayed: return "expert_replayed";
        default: return "none";
    }
}

}  // namespace

double convex_hull_area(const std::vector<std::array<double, 2>>& pts) {
    if (pts.size() < 3) return 0.0;
    std::vector<std::array<double, 2>> p = pts;
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    const int n = static_cast<int>(p.size());
    if (n < 3) return 0.0;
    auto cross = [](const std::array<double, 2>& o, const std::array<double, 2>& a,
                    const std::array<double, 2>& b) {
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    };
    std::vector<std::array<double, 2>> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
        hull[k++] = p[i];
    }
    const int lower = k + 1;
    for (int i = n - 2; i >= 0; --i) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], p[i]) <= 0) --k;
        hull[k++] = p[i];
    }
    hull.resize(k - 1);
    double area = 0.0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const auto& a = hull[i];
        const auto& b = hull[(i + 1) % hull.size()];
        area += a[0] * b[1] - b[0] * a[1];
    }
    return std::abs(area) / 2.0;
}

DiversityReport context_diversity(const std::vector<std::array<float, 8>>& points,
                                  const std::vector<ContextOrigin>& origins) {
    if (points.size() < 3)
        throw ConfigError("context diversity needs at least 3 state points");
    if (points.size() != origins.size())
        throw ConfigError("context diversity: points and origins must pair up");

    const int n = static_cast<int>(points.size());
    // scalar centering and covariance keep the result independent of heap
    // layout (vectorized reductions are not)
    std::array<double, 8> mean{};
    for (const auto& p : points)
        for (int d = 0; d < 8; ++d) mean[d] += p[d];
    for (auto& m : mean) m /= n;
    Eigen::MatrixXd X(n, 8);
    for (int i = 0; i < n; ++i)
        for (int d = 0; d < 8; ++d) X(i, d) = points[i][d] - mean[d];

    Eigen::Matrix<double, 8, 8> cov = Eigen::Matrix<double, 8, 8>::Zero();
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < 8; ++a)
            for (int b = 0; b < 8; ++b) cov(a, b) += X(i, a) * X(i, b);
    cov /= std::max(1, n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> es(cov);
    const auto& vals = es.eigenvalues();   // ascending
    const auto& vecs = es.eigenvectors();

    DiversityReport rep;
    rep.origins = origins;
    const double total = std::max(0.0, vals.sum());
    if (total < 1e-12) {
        rep.zero_spread = true;
        rep.projected.assign(n, {0.0, 0.0});
        for (const auto& o : origins) rep.hull_area[origin_key(o)] = 0.0;
        return rep;
    }
    const Eigen::Matrix<double, 8, 1> pc1 = vecs.col(7), pc2 = vecs.col(6);
    rep.variance_explained = {vals(7) / total, vals(6) / total};
    rep.projected.resize(n);
    std::map<std::string, std::vector<std::array<double, 2>>> clouds;
    for (int i = 0; i < n; ++i) {
        double u = 0.0, v = 0.0;
        for (int d = 0; d < 8; ++d) {
            u += X(i, d) * pc1(d);
            v += X(i, d) * pc2(d);
        }
        rep.projected[i] = {u, v};
        clouds[origin_key(origins[i])].push_back(rep.projected[i]);
    }
    for (const auto& [key, cloud] : clouds) rep.hull_area[key] = convex_hull_area(cloud);
    return rep;
}

}  // namespace hdexpit
