#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2d/core/tensor.hpp"
#include "s2d/syndata/grammar.hpp"

namespace s2d::syndata {

using Tokens = std::vector<std::string>;

struct FindingLabel {
    int finding = 0;
    int region = 0;
    bool present = true;
    int severity = 0;  // meaningful only when present; 0 otherwise

    auto operator<=>(const FindingLabel&) const = default;
};

/// (finding, region, polarity): what the report states, severity dropped.
struct PolarLabel {
    int finding = 0;
    int region = 0;
    bool present = true;

    auto operator<=>(const PolarLabel&) const = default;
};

struct Tuple {
    std::string entity;    // "effusion"
    std::string relation;  // "present-mild" / "absent"
    std::string region;    // "left-base"

    bool operator==(const Tuple&) const = default;
};

struct Image {
    int height = 0, width = 0, channels = 1;
    std::vector<float> pixels;  // row-major H×W×C

    float at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float& at(int y, int x, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    bool operator==(const Image&) const = default;
};

struct StudyRecord {
    int patient_id = 0;
    int study_index = 0;
    std::uint64_t anatomy_seed = 0;
    std::vector<FindingLabel> labels;  // canonical order: region-major, then finding
    Tokens report;                     // ends with <eos>
    std::vector<Tuple> tuples;
    std::vector<Tokens> phrases;
    Image image;

    bool operator==(const StudyRecord&) const = default;
};

struct PatientRecord {
    int patient_id = 0;
    std::uint64_t anatomy_seed = 0;
    std::vector<StudyRecord> studies;

    bool operator==(const PatientRecord&) const = default;
};

struct GenOptions {
    int min_studies = 2;
    int max_studies = 3;
    int max_labels = 3;  // per study; labels occupy distinct regions
    int image_size = 64;
    int patch_size = 8;
};

/// Canonical order and validity; throws ErrorKind::catalog on out-of-range ids.
void validate_labels(const std::vector<FindingLabel>& labels, const FindingCatalog& catalog);
std::vector<FindingLabel> canonical_order(std::vector<FindingLabel> labels);
std::vector<PolarLabel> polar(const std::vector<FindingLabel>& labels);

/// Deterministic in `seed`; fills report, tuples, phrases and image.
PatientRecord gen_patient(std::uint64_t seed, int patient_id, const Grammar& grammar, const GenOptions& options);
PatientRecord gen_patient(std::uint64_t seed, const FindingCatalog& catalog);

/// Injective in the patient seed, so distinct patients never share anatomy.
std::uint64_t anatomy_seed_for(std::uint64_t patient_seed);

/// Pure background for an anatomy (no findings).
Image render_background(std::uint64_t anatomy_seed, int height, int width);
/// Background plus one glyph per present finding, inside its region cell.
Image render_radiograph(const StudyRecord& study, int height, int width, int patch_size,
                        const FindingCatalog& catalog = default_catalog());

struct CellBounds {
    int y0, y1, x0, x1;  // half-open
};
CellBounds region_cell(int region, int height, int width, const FindingCatalog& catalog = default_catalog());

Tokens compose_report(const std::vector<FindingLabel>& labels, const Grammar& grammar = default_grammar());
std::vector<Tuple> extract_tuples(const StudyRecord& study, const Grammar& grammar = default_grammar());
std::vector<Tokens> refine_tuples_to_phrases(const std::vector<Tuple>& tuples, const Grammar& grammar = default_grammar());

struct Demonstration {
    std::vector<Tuple> tuples;
    std::vector<Tokens> phrases;
};

/// Few-shot refinement prompt: a system section with `n_demos` sampled
/// demonstrations, a dashed separator, then a user section with the query.
std::string render_refinement_prompt(const std::vector<Tuple>& tuples, const std::vector<Demonstration>& demos,
                                     int n_demos, std::uint64_t sampling_seed);
inline constexpr int kDefaultPromptDemos = 3;

/// Index of a uniformly chosen study other than `study_index`.
int select_reference_index(const PatientRecord& patient, int study_index, Rng& rng);
const Tokens& select_reference(const PatientRecord& patient, int study_index, Rng& rng);

std::string join(const Tokens& tokens, char sep = ' ');
Tokens split_ws(std::string_view text);

}  // namespace s2d::syndata
