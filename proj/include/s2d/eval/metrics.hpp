#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "s2d/syndata/syndata.hpp"

namespace s2d::eval {

using syndata::Tokens;

inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr double kRougeBeta = 1.2;

/// Modified n-gram precision statistics summed over one or more sentences.
struct BleuStats {
    std::array<double, 4> matches{};  // clipped
    std::array<double, 4> totals{};   // candidate n-grams
    double cand_len = 0;
    double ref_len = 0;  // closest reference length, ties to the shorter

    BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(std::span<const int> candidate, const std::vector<std::vector<int>>& references);

/// Geometric mean of p_1..p_n times the brevity penalty. Orders with no
/// candidate n-grams are left out of the mean; a zero match count is replaced
/// by kBleuEpsilon. An empty candidate scores 0.
double bleu_from_stats(const BleuStats& stats, int n);

double bleu_n(std::span<const int> candidate, const std::vector<std::vector<int>>& references, int n);
double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n);

std::size_t lcs_length(std::span<const int> a, std::span<const int> b);

/// LCS F-measure, F = (1+β²)PR / (R+β²P). Empty input scores 0.
double rouge_l(std::span<const int> candidate, std::span<const int> reference, double beta = kRougeBeta);
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = kRougeBeta);

/// Reads "<severity|no> <finding> at the <side> <zone> ." sentences. Anything
/// unparseable is skipped; parsing stops at <eos>. A later sentence about the
/// same (finding, region) overrides an earlier one. Sorted by (finding, region).
std::vector<syndata::FindingLabel> parse_findings(const Tokens& report,
                                                  const syndata::Grammar& grammar = syndata::default_grammar());

struct CeScores {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    long tp = 0, fp = 0, fn = 0;
};

enum class CeAverage { micro, macro };

/// Positive (finding, region) pairs of each prediction vs. its ground truth.
/// With no positives anywhere, precision = recall = 1. Macro averaging takes
/// the per-finding-kind scores over kinds that occur in either list.
/// Throws ErrorKind::usage when the list lengths differ.
CeScores ce_scores(const std::vector<std::vector<syndata::FindingLabel>>& predictions,
                   const std::vector<std::vector<syndata::FindingLabel>>& truths, CeAverage average = CeAverage::micro);

struct MetricReport {
    std::array<double, 4> bleu{};  // BLEU-1..4, corpus level
    double rouge_l = 0;            // mean sentence score
    double ce_precision = 0;
    double ce_recall = 0;
    double ce_f1 = 0;
    std::size_t samples = 0;
};

/// Candidates and references are report token lists; specials are ignored.
MetricReport evaluate_reports(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references,
                              const syndata::Grammar& grammar = syndata::default_grammar(),
                              CeAverage average = CeAverage::micro);

std::string format_labels(const std::vector<syndata::FindingLabel>& labels, const syndata::FindingCatalog& catalog);

}  // namespace s2d::eval
