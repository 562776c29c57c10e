#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace s2d::syndata {

inline constexpr std::string_view kPad = "<pad>";
inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";

/// Closed catalog of finding kinds, anatomical regions and severities.
/// Regions form a 2 (side) × 3 (zone) grid; region id = zone·2 + side.
struct FindingCatalog {
    std::vector<std::string> findings;
    std::vector<std::string> sides;  // image column 0, 1
    std::vector<std::string> zones;  // image row band 0, 1, 2
    std::vector<std::string> severities;

    int finding_count() const { return static_cast<int>(findings.size()); }
    int region_count() const { return static_cast<int>(sides.size() * zones.size()); }
    int severity_count() const { return static_cast<int>(severities.size()); }

    int side_of(int region) const { return region % static_cast<int>(sides.size()); }
    int zone_of(int region) const { return region / static_cast<int>(sides.size()); }
    /// "left base"
    std::string region_words(int region) const;
    /// "left-base", the tuple form
    std::string region_tag(int region) const;

    int find_finding(std::string_view name) const;  // -1 if absent
    int find_severity(std::string_view name) const;
    int find_region_tag(std::string_view tag) const;
};

/// 12 findings × 6 regions × 3 severities.
const FindingCatalog& default_catalog();

/// Sentence templates for reports and key phrases. Reports are deliberately
/// formulaic: a fixed preamble, one sentence per label, a fixed closing.
struct Grammar {
    FindingCatalog catalog;
    std::vector<std::string> preamble;  // e.g. "frontal view of the chest ."
    std::vector<std::string> closing;
    std::vector<std::string> no_findings;
    std::string negation = "no";
    std::string locative = "at";
    std::string article = "the";
    std::string stop = ".";

    /// Every token a report or phrase can contain (no specials).
    std::vector<std::string> closed_vocabulary() const;
};

using TemplateGrammar = Grammar;
using PhraseGrammar = Grammar;

const Grammar& default_grammar();

}  // namespace s2d::syndata
