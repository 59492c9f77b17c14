// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace fpa3d {

// One perturbable parameter block, viewed as flat 64-bit storage.
struct ParamRef {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

struct GradReport {
    struct Entry {
        std::string param;
        double max_rel_err = 0.0;
        bool pass = false;
    };
    std::string op;
    std::vector<Entry> entries;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;

    // One line per parameter: "<op> <param> max_rel_err=<v> <PASS|FAIL>".
    void print(std::ostream& os) const;
};

// Central-difference check of an analytic gradient. `loss` evaluates the
// scalar objective at the parameters' current values; `analytic` returns one
// flat gradient per ParamRef, in the same order. Runs at 64-bit only.
GradReport gradcheck(const std::string& op, const std::vector<ParamRef>& params,
                     const std::function<double()>& loss,
                     const std::function<std::vector<std::vector<double>>()>& analytic,
                     double tolerance = 1e-4, double step = 1e-5);

} // namespace fpa3d
