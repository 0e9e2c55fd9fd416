#include "bionic/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bionic/rng.hpp"

namespace bionic {

std::string GradCheckReport::summary() const {
    std::ostringstream os;
    for (const auto& g : groups) {
        os << g.name << ": max_rel_err=" << g.max_rel_err << " (" << g.entries_checked
           << " entries)\n";
    }
    os << "overall max_rel_err=" << max_rel_err;
    return os.str();
}

GradCheckReport grad_check(const std::function<Tensor<double>()>& func,
                           const std::vector<std::pair<std::string, Tensor<double>>>& wrt,
                           double h, int max_entries_per_group, std::uint64_t sample_seed) {
    GradCheckReport report;

    // Analytic pass.
    for (auto& [name, t] : wrt) {
        const_cast<Tensor<double>&>(t).zero_grad();
    }
    Tensor<double> loss = func();
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(wrt.size());
    for (auto& [name, t] : wrt) {
        auto g = t.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) {
            analytic.back().assign(static_cast<std::size_t>(t.numel()), 0.0);
        }
    }

    for (std::size_t gi = 0; gi < wrt.size(); ++gi) {
        auto& [name, t_const] = wrt[gi];
        auto& t = const_cast<Tensor<double>&>(t_const);
        const std::int64_t n = t.numel();

        std::vector<std::int64_t> idx;
        if (n <= max_entries_per_group) {
            idx.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        } else {
            RngStream rng(sample_seed, RngStream::mix(0xFD, gi));
            for (int i = 0; i < max_entries_per_group; ++i) {
                idx.push_back(static_cast<std::int64_t>(rng.uniform_int(
                    static_cast<std::uint64_t>(n))));
            }
            std::sort(idx.begin(), idx.end());
            idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        }

        GradCheckGroup group;
        group.name = name;
        group.entries_checked = static_cast<std::int64_t>(idx.size());
        double* data = t.data();
        for (std::int64_t i : idx) {
            const double saved = data[i];
            data[i] = saved + h;
            const double f_plus = func().item();
            data[i] = saved - h;
            const double f_minus = func().item();
            data[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double an = analytic[gi][static_cast<std::size_t>(i)];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            group.max_rel_err = std::max(group.max_rel_err, std::abs(fd - an) / denom);
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace bionic
