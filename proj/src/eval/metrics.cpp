#include "s2d/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "s2d/core/error.hpp"

namespace s2d::eval {
namespace {

using Key = std::uint64_t;

// n-grams of ids below 2^16 packed into one word; the order is implicit.
std::vector<Key> ngram_keys(std::span<const int> seq, int n) {
    std::vector<Key> keys;
    if (static_cast<int>(seq.size()) < n) return keys;
    keys.reserve(seq.size() - n + 1);
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        Key k = 0;
        for (int j = 0; j < n; ++j) k = (k << 16) | static_cast<Key>(seq[i + j]);
        keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    return keys;
}

void check_ids(std::span<const int> seq) {
    for (int id : seq) {
        if (id < 0 || id > 0xFFFF) throw Error(ErrorKind::usage, "metric token id out of range: " + std::to_string(id));
    }
}

// Interns words so the string overloads share the id-based implementation.
struct Interner {
    std::unordered_map<std::string, int> ids;
    std::vector<int> map(const Tokens& tokens) {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) out.push_back(ids.emplace(t, static_cast<int>(ids.size())).first->second);
        return out;
    }
};

bool is_special(const std::string& t) { return t == syndata::kPad || t == syndata::kBos || t == syndata::kEos; }

Tokens strip_specials(const Tokens& tokens) {
    Tokens out;
    for (const auto& t : tokens) {
        if (t == syndata::kEos) break;
        if (!is_special(t)) out.push_back(t);
    }
    return out;
}

double ratio_or(long num, long den, double fallback) { return den > 0 ? static_cast<double>(num) / den : fallback; }

CeScores score_counts(long tp, long fp, long fn) {
    CeScores s;
    s.tp = tp;
    s.fp = fp;
    s.fn = fn;
    s.precision = ratio_or(tp, tp + fp, tp + fn == 0 ? 1.0 : 0.0);
    s.recall = ratio_or(tp, tp + fn, tp + fp == 0 ? 1.0 : 0.0);
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

std::vector<std::pair<int, int>> positives(const std::vector<syndata::FindingLabel>& labels) {
    std::vector<std::pair<int, int>> out;
    for (const auto& l : labels) {
        if (l.present) out.emplace_back(l.finding, l.region);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
    for (int k = 0; k < 4; ++k) {
        matches[k] += o.matches[k];
        totals[k] += o.totals[k];
    }
    cand_len += o.cand_len;
    ref_len += o.ref_len;
    return *this;
}

BleuStats bleu_stats(std::span<const int> candidate, const std::vector<std::vector<int>>& references) {
    check_ids(candidate);
    BleuStats s;
    s.cand_len = static_cast<double>(candidate.size());
    if (!references.empty()) {
        std::size_t best = references.front().size();
        for (const auto& r : references) {
            const auto d = [&](std::size_t len) { return len > candidate.size() ? len - candidate.size() : candidate.size() - len; };
            if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
        }
        s.ref_len = static_cast<double>(best);
    }
    for (int n = 1; n <= 4; ++n) {
        const auto cand = ngram_keys(candidate, n);
        s.totals[n - 1] = static_cast<double>(cand.size());
        if (cand.empty()) continue;
        // Distinct candidate n-grams with their counts, and the max count in any reference.
        std::vector<std::pair<Key, int>> counts;
        for (Key k : cand) {
            if (counts.empty() || counts.back().first != k) counts.emplace_back(k, 0);
            ++counts.back().second;
        }
        std::vector<int> ref_max(counts.size(), 0);
        for (const auto& r : references) {
            check_ids(r);
            const auto ref = ngram_keys(r, n);
            std::size_t j = 0;
            for (std::size_t i = 0; i < counts.size(); ++i) {
                while (j < ref.size() && ref[j] < counts[i].first) ++j;
                int c = 0;
                while (j < ref.size() && ref[j] == counts[i].first) ++c, ++j;
                ref_max[i] = std::max(ref_max[i], c);
            }
        }
        for (std::size_t i = 0; i < counts.size(); ++i) s.matches[n - 1] += std::min(counts[i].second, ref_max[i]);
    }
    return s;
}

double bleu_from_stats(const BleuStats& s, int n) {
    if (n < 1 || n > 4) throw Error(ErrorKind::usage, "BLEU order must be in 1..4, got " + std::to_string(n));
    if (s.cand_len <= 0) return 0.0;
    double log_sum = 0;
    int orders = 0;
    for (int k = 0; k < n; ++k) {
        if (s.totals[k] <= 0) continue;
        const double m = s.matches[k] > 0 ? s.matches[k] : kBleuEpsilon;
        log_sum += std::log(m / s.totals[k]);
        ++orders;
    }
    const double bp = s.cand_len > s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.cand_len);
    return bp * std::exp(log_sum / orders);
}

double bleu_n(std::span<const int> candidate, const std::vector<std::vector<int>>& references, int n) {
    if (candidate.empty()) {
        if (n < 1 || n > 4) throw Error(ErrorKind::usage, "BLEU order must be in 1..4, got " + std::to_string(n));
        return 0.0;
    }
    return bleu_from_stats(bleu_stats(candidate, references), n);
}

double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
    Interner in;
    const auto c = in.map(candidate);
    std::vector<std::vector<int>> refs;
    for (const auto& r : references) refs.push_back(in.map(r));
    return bleu_n(c, refs, n);
}

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::span<const int> candidate, std::span<const int> reference, double beta) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0) return 0.0;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    const double b2 = beta * beta;
    return (1 + b2) * p * r / (r + b2 * p);
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
    Interner in;
    const auto c = in.map(candidate);
    const auto r = in.map(reference);
    return rouge_l(c, r, beta);
}

std::vector<syndata::FindingLabel> parse_findings(const Tokens& report, const syndata::Grammar& grammar) {
    const auto& cat = grammar.catalog;
    std::map<std::pair<int, int>, syndata::FindingLabel> found;
    Tokens sentence;
    auto flush = [&] {
        // <severity|no> <finding> <locative> <article> <side> <zone>
        if (sentence.size() == 6 && sentence[2] == grammar.locative && sentence[3] == grammar.article) {
            const int finding = cat.find_finding(sentence[1]);
            const bool negated = sentence[0] == grammar.negation;
            const int severity = negated ? 0 : cat.find_severity(sentence[0]);
            const auto side = std::find(cat.sides.begin(), cat.sides.end(), sentence[4]);
            const auto zone = std::find(cat.zones.begin(), cat.zones.end(), sentence[5]);
            if (finding >= 0 && severity >= 0 && side != cat.sides.end() && zone != cat.zones.end()) {
                const int region = static_cast<int>(zone - cat.zones.begin()) * static_cast<int>(cat.sides.size()) +
                                   static_cast<int>(side - cat.sides.begin());
                found[{finding, region}] = syndata::FindingLabel{finding, region, !negated, severity};
            }
        }
        sentence.clear();
    };
    for (const auto& t : report) {
        if (t == syndata::kEos) break;
        if (t == grammar.stop) {
            flush();
        } else {
            sentence.push_back(t);
        }
    }
    std::vector<syndata::FindingLabel> out;
    for (const auto& [slot, label] : found) out.push_back(label);
    return out;
}

CeScores ce_scores(const std::vector<std::vector<syndata::FindingLabel>>& predictions,
                   const std::vector<std::vector<syndata::FindingLabel>>& truths, CeAverage average) {
    if (predictions.size() != truths.size()) {
        throw Error(ErrorKind::usage, "ce_scores: " + std::to_string(predictions.size()) + " predictions vs " +
                                          std::to_string(truths.size()) + " ground truths");
    }
    // finding kind -> (tp, fp, fn)
    std::map<int, std::array<long, 3>> per_kind;
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto p = positives(predictions[i]);
        const auto t = positives(truths[i]);
        for (const auto& slot : p) {
            const bool hit = std::binary_search(t.begin(), t.end(), slot);
            ++(hit ? tp : fp);
            ++per_kind[slot.first][hit ? 0 : 1];
        }
        for (const auto& slot : t) {
            if (!std::binary_search(p.begin(), p.end(), slot)) {
                ++fn;
                ++per_kind[slot.first][2];
            }
        }
    }
    CeScores micro = score_counts(tp, fp, fn);
    if (average == CeAverage::micro || per_kind.empty()) return micro;
    CeScores macro = micro;
    macro.precision = macro.recall = macro.f1 = 0;
    for (const auto& [kind, c] : per_kind) {
        const CeScores s = score_counts(c[0], c[1], c[2]);
        macro.precision += s.precision;
        macro.recall += s.recall;
        macro.f1 += s.f1;
    }
    const double k = static_cast<double>(per_kind.size());
    macro.precision /= k;
    macro.recall /= k;
    macro.f1 /= k;
    return macro;
}

MetricReport evaluate_reports(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                              const syndata::Grammar& grammar, CeAverage average) {
    if (candidates.size() != references.size()) throw Error(ErrorKind::usage, "candidate and reference counts differ");
    MetricReport m;
    m.samples = candidates.size();
    if (candidates.empty()) return m;
    BleuStats total;
    double rouge_sum = 0;
    std::vector<std::vector<syndata::FindingLabel>> pred_labels, true_labels;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const Tokens c = strip_specials(candidates[i]);
        const Tokens r = strip_specials(references[i]);
        Interner in;
        const auto ci = in.map(c);
        const auto ri = in.map(r);
        total += bleu_stats(ci, {ri});
        rouge_sum += rouge_l(ci, ri);
        pred_labels.push_back(parse_findings(c, grammar));
        true_labels.push_back(parse_findings(r, grammar));
    }
    for (int n = 1; n <= 4; ++n) m.bleu[n - 1] = bleu_from_stats(total, n);
    m.rouge_l = rouge_sum / static_cast<double>(candidates.size());
    const CeScores ce = ce_scores(pred_labels, true_labels, average);
    m.ce_precision = ce.precision;
    m.ce_recall = ce.recall;
    m.ce_f1 = ce.f1;
    return m;
}

std::string format_labels(const std::vector<syndata::FindingLabel>& labels, const syndata::FindingCatalog& catalog) {
    std::string out;
    for (const auto& l : labels) {
        if (!out.empty()) out += ';';
        out += catalog.findings[static_cast<std::size_t>(l.finding)] + '@' + catalog.region_tag(l.region) + '=' +
               (l.present ? catalog.severities[static_cast<std::size_t>(l.severity)] : std::string("absent"));
    }
    return out.empty() ? "-" : out;
}

}  // namespace s2d::eval
