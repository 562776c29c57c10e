#include "s2d/syndata/grammar.hpp"

#include <algorithm>
#include <set>

namespace s2d::syndata {

namespace {

int index_of(const std::vector<std::string>& v, std::string_view s) {
    auto it = std::find(v.begin(), v.end(), s);
    return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

}  // namespace

std::string FindingCatalog::region_words(int region) const {
    return sides[static_cast<std::size_t>(side_of(region))] + " " + zones[static_cast<std::size_t>(zone_of(region))];
}

std::string FindingCatalog::region_tag(int region) const {
    return sides[static_cast<std::size_t>(side_of(region))] + "-" + zones[static_cast<std::size_t>(zone_of(region))];
}

int FindingCatalog::find_finding(std::string_view name) const { return index_of(findings, name); }

int FindingCatalog::find_severity(std::string_view name) const { return index_of(severities, name); }

int FindingCatalog::find_region_tag(std::string_view tag) const {
    for (int r = 0; r < region_count(); ++r) {
        if (region_tag(r) == tag) return r;
    }
    return -1;
}

const FindingCatalog& default_catalog() {
    static const FindingCatalog catalog{
        {"effusion", "pneumothorax", "consolidation", "atelectasis", "edema", "nodule", "mass", "opacity",
         "emphysema", "fibrosis", "calcification", "granuloma"},
        {"right", "left"},
        {"apex", "midzone", "base"},
        {"mild", "moderate", "severe"},
    };
    return catalog;
}

std::vector<std::string> Grammar::closed_vocabulary() const {
    std::set<std::string> tokens;
    for (const auto& v : {preamble, closing, no_findings, catalog.findings, catalog.sides, catalog.zones,
                          catalog.severities}) {
        tokens.insert(v.begin(), v.end());
    }
    tokens.insert({negation, locative, article, stop});
    return {tokens.begin(), tokens.end()};
}

const Grammar& default_grammar() {
    static const Grammar grammar{
        default_catalog(),
        {"frontal", "view", "of", "the", "chest", "."},
        {"heart", "size", "is", "normal", "."},
        {"no", "acute", "findings", "."},
    };
    return grammar;
}

}  // namespace s2d::syndata
