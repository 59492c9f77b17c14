// SPDX-License-Identifier: Apache-2.0
#include "fpa3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "fpa3d/errors.hpp"

namespace fpa3d {

std::int64_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    const std::size_t la = a.size(), lb = b.size();
    std::vector<std::int64_t> prev(lb + 1), cur(lb + 1);
    for (std::size_t j = 0; j <= lb; ++j) prev[j] = static_cast<std::int64_t>(j);
    for (std::size_t i = 1; i <= la; ++i) {
        cur[0] = static_cast<std::int64_t>(i);
        for (std::size_t j = 1; j <= lb; ++j) {
            const std::int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[lb];
}

std::vector<std::string> tokenize(const std::string& text, Tokenize how) {
    std::vector<std::string> out;
    if (how == Tokenize::chars) {
        out.reserve(text.size());
        for (char ch : text) out.emplace_back(1, ch);
    } else {
        std::istringstream is(text);
        std::string word;
        while (is >> word) out.push_back(word);
    }
    return out;
}

double error_rate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, Tokenize how) {
    if (refs.empty() || hyps.size() != refs.size())
        throw ArgumentError("error_rate: need equal non-empty hypothesis/reference corpora");
    std::int64_t dist = 0, ref_len = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto h = tokenize(hyps[i], how);
        const auto r = tokenize(refs[i], how);
        dist += edit_distance(h, r);
        ref_len += static_cast<std::int64_t>(r.size());
    }
    if (ref_len == 0) throw ArgumentError("error_rate: reference corpus is empty after tokenization");
    return static_cast<double>(dist) / static_cast<double>(ref_len);
}

namespace {

std::map<std::vector<std::string>, std::int64_t> ngram_counts(const std::vector<std::string>& toks,
                                                              std::size_t n) {
    std::map<std::vector<std::string>, std::int64_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                          toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

} // namespace

double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
    if (refs.empty() || hyps.size() != refs.size())
        throw ArgumentError("bleu: need equal non-empty hypothesis/reference corpora");

    std::size_t max_n = 4;
    std::int64_t hyp_len = 0, ref_len = 0;
    std::vector<std::vector<std::string>> htoks, rtoks;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        htoks.push_back(tokenize(hyps[i], Tokenize::words));
        rtoks.push_back(tokenize(refs[i], Tokenize::words));
        hyp_len += static_cast<std::int64_t>(htoks.back().size());
        ref_len += static_cast<std::int64_t>(rtoks.back().size());
        max_n = std::min(max_n, std::max<std::size_t>(rtoks.back().size(), 1));
    }

    double log_prec = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        std::int64_t matched = 0, total = 0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            const auto hc = ngram_counts(htoks[i], n);
            const auto rc = ngram_counts(rtoks[i], n);
            for (const auto& [gram, count] : hc) {
                total += count;
                const auto it = rc.find(gram);
                if (it != rc.end()) matched += std::min(count, it->second);
            }
        }
        if (total == 0 || matched == 0) return 0.0;
        log_prec += std::log(static_cast<double>(matched) / static_cast<double>(total));
    }
    log_prec /= static_cast<double>(max_n);

    double bp = 1.0;
    if (hyp_len < ref_len && hyp_len > 0)
        bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    if (hyp_len == 0) return 0.0;
    return bp * std::exp(log_prec);
}

std::vector<double> per_slot_wer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                 std::size_t slots) {
    if (refs.empty() || hyps.size() != refs.size())
        throw ArgumentError("per_slot_wer: need equal non-empty hypothesis/reference corpora");
    std::vector<std::int64_t> errors(slots, 0);
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const auto r = tokenize(refs[i], Tokenize::words);
        if (r.size() != slots)
            throw ArgumentError("per_slot_wer: reference '" + refs[i] + "' does not have " +
                                std::to_string(slots) + " slots");
        const auto h = tokenize(hyps[i], Tokenize::words);
        for (std::size_t s = 0; s < slots; ++s)
            if (s >= h.size() || h[s] != r[s]) ++errors[s];
    }
    std::vector<double> out(slots);
    for (std::size_t s = 0; s < slots; ++s)
        out[s] = static_cast<double>(errors[s]) / static_cast<double>(refs.size());
    return out;
}

std::string EvalReport::to_line() const {
    std::ostringstream os;
    os << "cer=" << cer << " wer=" << wer << " bleu=" << bleu;
    for (std::size_t i = 0; i < slot_wer.size(); ++i) os << " wer" << (i + 1) << "=" << slot_wer[i];
    return os.str();
}

EvalReport evaluate_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                           std::size_t slots) {
    EvalReport r;
    r.cer = error_rate(hyps, refs, Tokenize::chars);
    r.wer = error_rate(hyps, refs, Tokenize::words);
    r.bleu = bleu(hyps, refs);
    r.slot_wer = per_slot_wer(hyps, refs, slots);
    return r;
}

} // namespace fpa3d
