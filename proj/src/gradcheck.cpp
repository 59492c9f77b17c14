// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "fpa3d/errors.hpp"

namespace fpa3d {

void GradReport::print(std::ostream& os) const {
    for (const auto& e : entries)
        os << op << " " << e.param << " max_rel_err=" << e.max_rel_err << (e.pass ? " PASS" : " FAIL") << "\n";
}

GradReport gradcheck(const std::string& op, const std::vector<ParamRef>& params,
                     const std::function<double()>& loss,
                     const std::function<std::vector<std::vector<double>>()>& analytic,
                     double tolerance, double step) {
    GradReport report;
    report.op = op;
    report.tolerance = tolerance;
    report.pass = true;

    const std::vector<std::vector<double>> grads = analytic();
    if (grads.size() != params.size()) throw CorruptionError("gradcheck: analytic gradient count mismatch");

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const ParamRef& p = params[pi];
        if (grads[pi].size() != p.size)
            throw CorruptionError("gradcheck: gradient size mismatch for " + p.name);
        GradReport::Entry entry;
        entry.param = p.name;
        for (std::size_t i = 0; i < p.size; ++i) {
            const double saved = p.data[i];
            p.data[i] = saved + step;
            const double up = loss();
            p.data[i] = saved - step;
            const double down = loss();
            p.data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw NumericError("gradcheck: non-finite loss while perturbing " + p.name);
            const double numeric = (up - down) / (2.0 * step);
            const double analytic_v = grads[pi][i];
            const double denom = std::max({std::abs(analytic_v), std::abs(numeric), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, std::abs(analytic_v - numeric) / denom);
        }
        entry.pass = entry.max_rel_err < tolerance;
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.pass = report.pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace fpa3d
