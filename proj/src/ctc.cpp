// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fpa3d/errors.hpp"

namespace fpa3d {

std::vector<int> Alphabet::encode(const std::string& text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char ch : text) {
        const auto pos = symbols.find(ch);
        if (pos == std::string::npos)
            throw ArgumentError(std::string("alphabet: character '") + ch + "' not in alphabet");
        out.push_back(static_cast<int>(pos));
    }
    return out;
}

std::string Alphabet::decode(const std::vector<int>& indices) const {
    std::string out;
    out.reserve(indices.size());
    for (int i : indices) {
        if (i < 0 || i >= blank_index()) throw ArgumentError("alphabet: index out of range");
        out.push_back(symbols[static_cast<std::size_t>(i)]);
    }
    return out;
}

std::int64_t ctc_min_frames(const std::vector<int>& label) {
    std::int64_t repeats = 0;
    for (std::size_t i = 1; i < label.size(); ++i)
        if (label[i] == label[i - 1]) ++repeats;
    return static_cast<std::int64_t>(label.size()) + repeats;
}

namespace {

template <typename T>
constexpr T neg_inf() {
    return -std::numeric_limits<T>::infinity();
}

template <typename T>
T log_add(T a, T b) {
    if (a == neg_inf<T>()) return b;
    if (b == neg_inf<T>()) return a;
    const T m = std::max(a, b);
    return m + std::log1p(std::exp(std::min(a, b) - m));
}

template <typename T>
void check_rows_normalized(const Mat<T>& log_probs) {
    // Loose tolerance: finite-difference probes nudge single entries by ~1e-5
    // and must not trip the contract check.
    for (std::int64_t t = 0; t < log_probs.rows; ++t) {
        T m = log_probs.at(t, 0);
        for (std::int64_t k = 1; k < log_probs.cols; ++k) m = std::max(m, log_probs.at(t, k));
        T sum = T(0);
        for (std::int64_t k = 0; k < log_probs.cols; ++k) sum += std::exp(log_probs.at(t, k) - m);
        const T lse = m + std::log(sum);
        if (!(std::abs(lse) < T(1e-3)))
            throw NumericError("ctc: row " + std::to_string(t) + " is not a normalized log-probability row");
    }
}

} // namespace

template <typename T>
CtcResult<T> ctc_loss_grad(const Mat<T>& log_probs, const std::vector<int>& label) {
    const std::int64_t t_len = log_probs.rows;
    const std::int64_t classes = log_probs.cols;
    if (label.empty()) throw ArgumentError("ctc: empty label");
    const int blank = static_cast<int>(classes) - 1;
    for (int v : label)
        if (v < 0 || v >= blank) throw ArgumentError("ctc: label index out of range");
    if (t_len < ctc_min_frames(label))
        throw NumericError("ctc: label infeasible, needs at least " + std::to_string(ctc_min_frames(label)) +
                           " frames but got " + std::to_string(t_len));
    check_rows_normalized(log_probs);

    // Extended sequence: blanks interleaved, length 2L+1.
    const std::int64_t S = 2 * static_cast<std::int64_t>(label.size()) + 1;
    auto ext = [&](std::int64_t s) -> int {
        return (s % 2 == 0) ? blank : label[static_cast<std::size_t>(s / 2)];
    };

    Mat<T> alpha(t_len, S), beta(t_len, S);
    std::fill(alpha.data.begin(), alpha.data.end(), neg_inf<T>());
    std::fill(beta.data.begin(), beta.data.end(), neg_inf<T>());

    alpha.at(0, 0) = log_probs.at(0, blank);
    if (S > 1) alpha.at(0, 1) = log_probs.at(0, ext(1));
    for (std::int64_t t = 1; t < t_len; ++t) {
        for (std::int64_t s = 0; s < S; ++s) {
            T a = alpha.at(t - 1, s);
            if (s >= 1) a = log_add(a, alpha.at(t - 1, s - 1));
            if (s >= 2 && ext(s) != blank && ext(s) != ext(s - 2)) a = log_add(a, alpha.at(t - 1, s - 2));
            alpha.at(t, s) = a == neg_inf<T>() ? a : a + log_probs.at(t, ext(s));
        }
    }

    beta.at(t_len - 1, S - 1) = log_probs.at(t_len - 1, blank);
    if (S > 1) beta.at(t_len - 1, S - 2) = log_probs.at(t_len - 1, ext(S - 2));
    for (std::int64_t t = t_len - 2; t >= 0; --t) {
        for (std::int64_t s = S - 1; s >= 0; --s) {
            T b = beta.at(t + 1, s);
            if (s + 1 < S) b = log_add(b, beta.at(t + 1, s + 1));
            if (s + 2 < S && ext(s + 2) != blank && ext(s + 2) != ext(s)) b = log_add(b, beta.at(t + 1, s + 2));
            beta.at(t, s) = b == neg_inf<T>() ? b : b + log_probs.at(t, ext(s));
        }
    }

    const T log_p = log_add(alpha.at(t_len - 1, S - 1), S > 1 ? alpha.at(t_len - 1, S - 2) : neg_inf<T>());
    if (!std::isfinite(log_p)) throw NumericError("ctc: label has zero probability");

    // d(-log p)/d(log y_t(k)) = -(1/p) sum_{s: l'_s = k} alpha*beta / y_t(k)
    // (alpha and beta both carry the emission at t, hence the division).
    CtcResult<T> res;
    res.loss = -log_p;
    res.grad_log_probs = Mat<T>(t_len, classes);
    for (std::int64_t t = 0; t < t_len; ++t) {
        std::vector<T> acc(static_cast<std::size_t>(classes), neg_inf<T>());
        for (std::int64_t s = 0; s < S; ++s) {
            const T ab = alpha.at(t, s) + beta.at(t, s);
            if (ab == neg_inf<T>()) continue;
            auto& slot = acc[static_cast<std::size_t>(ext(s))];
            slot = log_add(slot, ab);
        }
        for (std::int64_t k = 0; k < classes; ++k) {
            const T a = acc[static_cast<std::size_t>(k)];
            if (a == neg_inf<T>()) continue;
            res.grad_log_probs.at(t, k) = -std::exp(a - log_probs.at(t, k) - log_p);
        }
    }
    return res;
}

template <typename T>
T ctc_brute_force(const Mat<T>& log_probs, const std::vector<int>& label) {
    const std::int64_t t_len = log_probs.rows;
    const std::int64_t classes = log_probs.cols;
    double paths = 1.0;
    for (std::int64_t t = 0; t < t_len; ++t) {
        paths *= static_cast<double>(classes);
        if (paths > 1e6) throw SizeError("ctc_brute_force: instance too large");
    }
    const int blank = static_cast<int>(classes) - 1;

    std::vector<int> seq(static_cast<std::size_t>(t_len), 0);
    T total = neg_inf<T>();
    while (true) {
        // collapse: remove repeats, then blanks
        std::vector<int> collapsed;
        int prev = -1;
        for (int v : seq) {
            if (v != prev && v != blank) collapsed.push_back(v);
            prev = v;
        }
        if (collapsed == label) {
            T lp = T(0);
            for (std::int64_t t = 0; t < t_len; ++t) lp += log_probs.at(t, seq[static_cast<std::size_t>(t)]);
            total = log_add(total, lp);
        }
        std::int64_t pos = t_len - 1;
        while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == classes - 1) {
            seq[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
        ++seq[static_cast<std::size_t>(pos)];
    }
    return -total; // -log(0) = +inf when no path collapses to the label
}

template <typename T>
std::string greedy_decode(const Mat<T>& log_probs, const Alphabet& alphabet) {
    if (log_probs.cols != alphabet.num_classes())
        throw ShapeError("greedy_decode: class count does not match alphabet");
    const int blank = alphabet.blank_index();
    std::vector<int> collapsed;
    int prev = -1;
    for (std::int64_t t = 0; t < log_probs.rows; ++t) {
        int best = 0;
        for (std::int64_t k = 1; k < log_probs.cols; ++k)
            if (log_probs.at(t, k) > log_probs.at(t, best)) best = static_cast<int>(k);
        if (best != prev && best != blank) collapsed.push_back(best);
        prev = best;
    }
    return alphabet.decode(collapsed);
}

template struct CtcResult<float>;
template struct CtcResult<double>;
template CtcResult<float> ctc_loss_grad(const Mat<float>&, const std::vector<int>&);
template CtcResult<double> ctc_loss_grad(const Mat<double>&, const std::vector<int>&);
template float ctc_brute_force(const Mat<float>&, const std::vector<int>&);
template double ctc_brute_force(const Mat<double>&, const std::vector<int>&);
template std::string greedy_decode(const Mat<float>&, const Alphabet&);
template std::string greedy_decode(const Mat<double>&, const Alphabet&);

} // namespace fpa3d
