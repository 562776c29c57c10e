#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "s2d/core/error.hpp"
#include "s2d/syndata/syndata.hpp"

namespace s2d::syndata {

namespace {

constexpr double kPresentProbability = 0.7;
constexpr float kNoiseSigma = 0.02f;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

FindingLabel random_label(Rng& rng, int region, const FindingCatalog& catalog) {
    FindingLabel l;
    l.region = region;
    l.finding = uniform_int(rng, 0, catalog.finding_count() - 1);
    l.present = std::bernoulli_distribution(kPresentProbability)(rng);
    l.severity = l.present ? uniform_int(rng, 0, catalog.severity_count() - 1) : 0;
    return l;
}

std::vector<FindingLabel> random_labels(Rng& rng, int max_labels, const FindingCatalog& catalog) {
    const int n = uniform_int(rng, 0, std::min(max_labels, catalog.region_count()));
    std::vector<int> regions(static_cast<std::size_t>(catalog.region_count()));
    std::iota(regions.begin(), regions.end(), 0);
    std::shuffle(regions.begin(), regions.end(), rng);
    std::vector<FindingLabel> labels;
    for (int i = 0; i < n; ++i) labels.push_back(random_label(rng, regions[static_cast<std::size_t>(i)], catalog));
    return canonical_order(std::move(labels));
}

// One interval change: a finding resolves or appears, worsens or improves,
// a new region gets a finding, or a mention drops out.
std::vector<FindingLabel> mutate(const std::vector<FindingLabel>& prior, Rng& rng, int max_labels,
                                 const FindingCatalog& catalog) {
    const int cap = std::min(max_labels, catalog.region_count());
    for (;;) {
        auto labels = prior;
        const int op = uniform_int(rng, 0, 3);
        if (op == 0 && !labels.empty()) {
            auto& l = labels[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(labels.size()) - 1))];
            l.present = !l.present;
            l.severity = l.present ? uniform_int(rng, 0, catalog.severity_count() - 1) : 0;
        } else if (op == 1) {
            std::vector<std::size_t> present;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                if (labels[i].present) present.push_back(i);
            }
            if (present.empty()) continue;
            auto& l = labels[present[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(present.size()) - 1))]];
            l.severity = (l.severity + uniform_int(rng, 1, catalog.severity_count() - 1)) % catalog.severity_count();
        } else if (op == 2 && static_cast<int>(labels.size()) < cap) {
            std::vector<int> free;
            for (int r = 0; r < catalog.region_count(); ++r) {
                if (std::none_of(labels.begin(), labels.end(), [r](const auto& l) { return l.region == r; })) {
                    free.push_back(r);
                }
            }
            labels.push_back(
                random_label(rng, free[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(free.size()) - 1))],
                             catalog));
        } else if (op == 3 && !labels.empty()) {
            labels.erase(labels.begin() + uniform_int(rng, 0, static_cast<int>(labels.size()) - 1));
        } else {
            continue;
        }
        labels = canonical_order(std::move(labels));
        if (labels != prior) return labels;
    }
}

// Glyph membership for finding kind `kind` at normalized (u, v) in [-1, 1]².
bool glyph_covers(int kind, double u, double v) {
    const double r2 = u * u + v * v;
    const double au = std::abs(u), av = std::abs(v);
    switch (kind % 12) {
        case 0: return r2 < 0.8;
        case 1: return r2 > 0.35 && r2 < 0.95;
        case 2: return std::max(au, av) < 0.75;
        case 3: return au < 0.25 || av < 0.25;
        case 4: return static_cast<int>(std::floor((v + 1.0) * 2.5)) % 2 == 0;
        case 5: return static_cast<int>(std::floor((u + 1.0) * 2.5)) % 2 == 0;
        case 6: return std::abs(u - v) < 0.35;
        case 7: return std::abs(u + v) < 0.35;
        case 8: return std::abs(u - v) < 0.3 || std::abs(u + v) < 0.3;
        case 9: return (static_cast<int>(std::floor((u + 1.0) * 2.0)) + static_cast<int>(std::floor((v + 1.0) * 2.0))) % 2 == 0;
        case 10: return (v + 1.0) / 2.0 >= au;
        default: return std::max(au, av) > 0.7;
    }
}

}  // namespace

void validate_labels(const std::vector<FindingLabel>& labels, const FindingCatalog& catalog) {
    std::set<std::pair<int, int>> slots;
    for (const auto& l : labels) {
        if (l.finding < 0 || l.finding >= catalog.finding_count()) {
            throw Error(ErrorKind::catalog, "finding id " + std::to_string(l.finding) + " not in catalog");
        }
        if (l.region < 0 || l.region >= catalog.region_count()) {
            throw Error(ErrorKind::catalog, "region id " + std::to_string(l.region) + " not in catalog");
        }
        if (l.severity < 0 || l.severity >= catalog.severity_count()) {
            throw Error(ErrorKind::catalog, "severity " + std::to_string(l.severity) + " not in catalog");
        }
        if (!slots.emplace(l.finding, l.region).second) {
            throw Error(ErrorKind::catalog, "two labels for the same finding and region");
        }
    }
}

std::vector<FindingLabel> canonical_order(std::vector<FindingLabel> labels) {
    std::sort(labels.begin(), labels.end(), [](const auto& a, const auto& b) {
        return std::tie(a.region, a.finding) < std::tie(b.region, b.finding);
    });
    return labels;
}

std::vector<PolarLabel> polar(const std::vector<FindingLabel>& labels) {
    std::vector<PolarLabel> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back({l.finding, l.region, l.present});
    std::sort(out.begin(), out.end());
    return out;
}

std::uint64_t anatomy_seed_for(std::uint64_t patient_seed) { return mix64(patient_seed ^ 0x5eedA7A7ULL); }

PatientRecord gen_patient(std::uint64_t seed, int patient_id, const Grammar& grammar, const GenOptions& options) {
    if (options.min_studies < 2 || options.max_studies < options.min_studies) {
        throw Error(ErrorKind::config, "patients need at least two studies (min_studies >= 2, max >= min)");
    }
    if (grammar.catalog.findings.empty()) throw Error(ErrorKind::config, "empty finding catalog");
    Rng rng(derive_seed(seed, 0x9A7));
    PatientRecord patient;
    patient.patient_id = patient_id;
    patient.anatomy_seed = anatomy_seed_for(seed);
    const int n_studies = uniform_int(rng, options.min_studies, options.max_studies);
    std::vector<FindingLabel> labels = random_labels(rng, options.max_labels, grammar.catalog);
    for (int k = 0; k < n_studies; ++k) {
        if (k > 0) labels = mutate(labels, rng, options.max_labels, grammar.catalog);
        StudyRecord s;
        s.patient_id = patient_id;
        s.study_index = k;
        s.anatomy_seed = patient.anatomy_seed;
        s.labels = labels;
        s.report = compose_report(labels, grammar);
        s.tuples = extract_tuples(s, grammar);
        s.phrases = refine_tuples_to_phrases(s.tuples, grammar);
        s.image = render_radiograph(s, options.image_size, options.image_size, options.patch_size, grammar.catalog);
        patient.studies.push_back(std::move(s));
    }
    return patient;
}

PatientRecord gen_patient(std::uint64_t seed, const FindingCatalog& catalog) {
    Grammar grammar = default_grammar();
    grammar.catalog = catalog;
    return gen_patient(seed, 0, grammar, GenOptions{});
}

Image render_background(std::uint64_t anatomy_seed, int height, int width) {
    Rng rng(anatomy_seed);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    Image img{height, width, 1, std::vector<float>(static_cast<std::size_t>(height) * width)};
    // Two dark lung fields inside brighter soft tissue, a bright mediastinal band.
    const double lung_cx[2] = {width * (0.27 + 0.02 * jitter(rng)), width * (0.73 + 0.02 * jitter(rng))};
    const double lung_cy = height * (0.52 + 0.02 * jitter(rng));
    const double ax = width * (0.21 + 0.015 * jitter(rng));
    const double ay = height * (0.42 + 0.02 * jitter(rng));
    const double tissue = 0.34 + 0.04 * jitter(rng);
    const double lung = 0.10 + 0.03 * jitter(rng);
    const double media = 0.50 + 0.05 * jitter(rng);
    std::normal_distribution<float> noise(0.0f, kNoiseSigma);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double v = tissue;
            for (double cx : lung_cx) {
                const double du = (x + 0.5 - cx) / ax, dv = (y + 0.5 - lung_cy) / ay;
                if (du * du + dv * dv < 1.0) v = lung;
            }
            if (std::abs(x + 0.5 - width / 2.0) < width * 0.06) v = media;
            img.at(y, x) = std::clamp(static_cast<float>(v) + noise(rng), 0.0f, 1.0f);
        }
    }
    return img;
}

CellBounds region_cell(int region, int height, int width, const FindingCatalog& catalog) {
    const int sides = static_cast<int>(catalog.sides.size());
    const int zones = static_cast<int>(catalog.zones.size());
    const int side = catalog.side_of(region), zone = catalog.zone_of(region);
    return {zone * height / zones, (zone + 1) * height / zones, side * width / sides, (side + 1) * width / sides};
}

Image render_radiograph(const StudyRecord& study, int height, int width, int patch_size, const FindingCatalog& catalog) {
    if (patch_size < 1 || height <= 0 || width <= 0 || height % patch_size != 0 || width % patch_size != 0) {
        throw Error(ErrorKind::config, "image size " + std::to_string(height) + "x" + std::to_string(width) +
                                           " not divisible by patch size " + std::to_string(patch_size));
    }
    validate_labels(study.labels, catalog);
    Image img = render_background(study.anatomy_seed, height, width);
    for (const auto& l : study.labels) {
        if (!l.present) continue;
        const auto cell = region_cell(l.region, height, width, catalog);
        const int ch = cell.y1 - cell.y0, cw = cell.x1 - cell.x0;
        const int size = std::min(ch, cw) * 3 / 4;
        if (size < 3) continue;
        const int by = cell.y0 + (ch - size) / 2, bx = cell.x0 + (cw - size) / 2;
        const double half = (size - 1) / 2.0;
        const float amplitude = 0.25f + 0.15f * static_cast<float>(l.severity);
        for (int dy = 0; dy < size; ++dy) {
            for (int dx = 0; dx < size; ++dx) {
                if (!glyph_covers(l.finding, (dx - half) / half, (dy - half) / half)) continue;
                float& p = img.at(by + dy, bx + dx);
                p = std::clamp(p + amplitude, 0.0f, 1.0f);
            }
        }
    }
    return img;
}

Tokens compose_report(const std::vector<FindingLabel>& labels, const Grammar& grammar) {
    validate_labels(labels, grammar.catalog);
    const auto& cat = grammar.catalog;
    Tokens out(grammar.preamble.begin(), grammar.preamble.end());
    if (labels.empty()) out.insert(out.end(), grammar.no_findings.begin(), grammar.no_findings.end());
    for (const auto& l : canonical_order(labels)) {
        out.push_back(l.present ? cat.severities[static_cast<std::size_t>(l.severity)] : grammar.negation);
        out.push_back(cat.findings[static_cast<std::size_t>(l.finding)]);
        out.push_back(grammar.locative);
        out.push_back(grammar.article);
        out.push_back(cat.sides[static_cast<std::size_t>(cat.side_of(l.region))]);
        out.push_back(cat.zones[static_cast<std::size_t>(cat.zone_of(l.region))]);
        out.push_back(grammar.stop);
    }
    out.insert(out.end(), grammar.closing.begin(), grammar.closing.end());
    out.emplace_back(kEos);
    return out;
}

std::vector<Tuple> extract_tuples(const StudyRecord& study, const Grammar& grammar) {
    const auto& cat = grammar.catalog;
    std::vector<Tuple> out;
    for (const auto& l : canonical_order(study.labels)) {
        if (!l.present) continue;
        out.push_back({cat.findings[static_cast<std::size_t>(l.finding)],
                       "present-" + cat.severities[static_cast<std::size_t>(l.severity)], cat.region_tag(l.region)});
    }
    return out;
}

std::vector<Tokens> refine_tuples_to_phrases(const std::vector<Tuple>& tuples, const Grammar& grammar) {
    const auto& cat = grammar.catalog;
    std::vector<Tokens> out;
    for (const auto& t : tuples) {
        constexpr std::string_view positive = "present-";
        if (t.relation.rfind(positive, 0) != 0) {
            if (t.relation.rfind("absent", 0) == 0) continue;
            throw Error(ErrorKind::grammar, "unknown relation '" + t.relation + "'");
        }
        const int finding = cat.find_finding(t.entity);
        if (finding < 0) throw Error(ErrorKind::grammar, "no phrase rule for entity '" + t.entity + "'");
        const int severity = cat.find_severity(std::string_view(t.relation).substr(positive.size()));
        if (severity < 0) throw Error(ErrorKind::grammar, "unknown severity in relation '" + t.relation + "'");
        const int region = cat.find_region_tag(t.region);
        if (region < 0) throw Error(ErrorKind::grammar, "unknown region '" + t.region + "'");
        out.push_back({cat.severities[static_cast<std::size_t>(severity)], t.entity, grammar.locative, grammar.article,
                       cat.sides[static_cast<std::size_t>(cat.side_of(region))],
                       cat.zones[static_cast<std::size_t>(cat.zone_of(region))]});
    }
    return out;
}

namespace {

std::string format_tuples(const std::vector<Tuple>& tuples) {
    if (tuples.empty()) return "(none)";
    std::string s;
    for (std::size_t i = 0; i < tuples.size(); ++i) {
        if (i) s += " | ";
        s += "(" + tuples[i].entity + ", " + tuples[i].relation + ", " + tuples[i].region + ")";
    }
    return s;
}

std::string format_phrases(const std::vector<Tokens>& phrases) {
    if (phrases.empty()) return "(none)";
    std::string s;
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        if (i) s += " | ";
        s += join(phrases[i]);
    }
    return s;
}

}  // namespace

std::string render_refinement_prompt(const std::vector<Tuple>& tuples, const std::vector<Demonstration>& demos,
                                     int n_demos, std::uint64_t sampling_seed) {
    if (n_demos < 0) throw Error(ErrorKind::usage, "negative demonstration count");
    if (static_cast<std::size_t>(n_demos) > demos.size()) {
        throw Error(ErrorKind::pool, "demonstration pool holds " + std::to_string(demos.size()) + ", need " +
                                         std::to_string(n_demos));
    }
    std::vector<std::size_t> order(demos.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(sampling_seed, 0xDE70));
    // Partial Fisher-Yates: the first n_demos entries are a uniform sample without replacement.
    for (int i = 0; i < n_demos; ++i) {
        std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), order.size() - 1);
        std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
    }
    std::ostringstream out;
    out << "[SYSTEM]\n"
        << "You turn entity-relation tuples taken from a chest radiograph report into short clinical phrases.\n"
        << "Each tuple is (entity, relation, region). Write one phrase per tuple whose relation is positive,\n"
        << "naming severity, entity and location, and write nothing for negative tuples.\n"
        << "Separate phrases with ' | '.\n";
    for (int i = 0; i < n_demos; ++i) {
        const auto& d = demos[order[static_cast<std::size_t>(i)]];
        out << "\nExample " << (i + 1) << "\n"
            << "Tuples: " << format_tuples(d.tuples) << "\n"
            << "Phrases: " << format_phrases(d.phrases) << "\n";
    }
    out << "----------------------------------------\n"
        << "[USER]\n"
        << "Tuples: " << format_tuples(tuples) << "\n"
        << "Phrases:\n";
    return out.str();
}

int select_reference_index(const PatientRecord& patient, int study_index, Rng& rng) {
    const int n = static_cast<int>(patient.studies.size());
    if (n < 2) throw Error(ErrorKind::selection, "patient " + std::to_string(patient.patient_id) + " has one study");
    if (study_index < 0 || study_index >= n) throw Error(ErrorKind::selection, "study index out of range");
    int j = std::uniform_int_distribution<int>(0, n - 2)(rng);
    if (j >= study_index) ++j;
    return j;
}

const Tokens& select_reference(const PatientRecord& patient, int study_index, Rng& rng) {
    return patient.studies[static_cast<std::size_t>(select_reference_index(patient, study_index, rng))].report;
}

std::string join(const Tokens& tokens, char sep) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s += sep;
        s += tokens[i];
    }
    return s;
}

Tokens split_ws(std::string_view text) {
    Tokens out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace s2d::syndata
