#include "s2d/syndata/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

#include "s2d/core/error.hpp"

namespace s2d::syndata {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "corpus files are written little-endian");

namespace {

constexpr char kImageMagic[7] = {'S', '2', 'D', 'I', 'M', 'G', '\0'};
constexpr std::uint32_t kImageVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in, const fs::path& path) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(ErrorKind::io, "truncated " + path.string());
    return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << text;
}

std::vector<int> numeric_entries(const fs::path& dir, const std::string& ext) {
    std::vector<int> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (ext.empty() ? e.is_directory() : e.path().extension() == ext) {
            try {
                ids.push_back(std::stoi(ext.empty() ? name : e.path().stem().string()));
            } catch (const std::exception&) {
                throw Error(ErrorKind::data, "unexpected entry " + e.path().string());
            }
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{std::string(kPad), std::string(kBos), std::string(kEos)}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) {
    if (tokens.size() < 3 || tokens[kPadId] != kPad || tokens[kBosId] != kBos || tokens[kEosId] != kEos) {
        throw Error(ErrorKind::vocab, "vocabulary must start with <pad> <bos> <eos>");
    }
    for (const auto& t : tokens) add(t);
}

void Vocab::add(const std::string& token) {
    if (token.empty() || token.find_first_of(" \t\n") != std::string::npos) {
        throw Error(ErrorKind::vocab, "invalid token '" + token + "'");
    }
    if (ids_.emplace(token, size()).second) tokens_.push_back(token);
}

int Vocab::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw Error(ErrorKind::vocab, "token '" + token + "' not in vocabulary");
    return it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw Error(ErrorKind::vocab, "token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const Tokens& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

Tokens Vocab::decode(const std::vector<int>& ids) const {
    Tokens out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
}

void CorpusConfig::validate() const {
    if (train_patients < 1 || val_patients < 0 || test_patients < 0) {
        throw Error(ErrorKind::config, "split sizes must be non-negative with at least one train patient");
    }
    const int sum = train_patients + val_patients + test_patients;
    if (total_patients != 0 && sum > total_patients) {
        throw Error(ErrorKind::config, "splits need " + std::to_string(sum) + " patients but total_patients is " +
                                           std::to_string(total_patients));
    }
    if (gen.min_studies < 2 || gen.max_studies < gen.min_studies) {
        throw Error(ErrorKind::config, "studies per patient must satisfy 2 <= min_studies <= max_studies");
    }
    if (gen.max_labels < 0) throw Error(ErrorKind::config, "max_labels must be >= 0");
    if (gen.patch_size < 1 || gen.image_size < gen.patch_size || gen.image_size % gen.patch_size != 0) {
        throw Error(ErrorKind::config, "image_size must be a positive multiple of patch_size");
    }
    if (gen.image_size < 24) throw Error(ErrorKind::config, "image_size below 24 leaves no room for glyphs");
}

std::string CorpusConfig::echo() const {
    std::ostringstream s;
    s << "corpus.train_patients=" << train_patients << "\n"
      << "corpus.val_patients=" << val_patients << "\n"
      << "corpus.test_patients=" << test_patients << "\n"
      << "corpus.total_patients=" << total_patients << "\n"
      << "corpus.min_studies=" << gen.min_studies << "\n"
      << "corpus.max_studies=" << gen.max_studies << "\n"
      << "corpus.max_labels=" << gen.max_labels << "\n"
      << "corpus.image_size=" << gen.image_size << "\n"
      << "corpus.patch_size=" << gen.patch_size << "\n"
      << "corpus.seed=" << seed << "\n";
    return s.str();
}

const char* to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw Error(ErrorKind::usage, "unknown split '" + name + "'");
}

const std::vector<PatientRecord>& CorpusSplit::patients(Split split) const {
    switch (split) {
        case Split::train: return train;
        case Split::val: return val;
        case Split::test: return test;
    }
    return train;
}

std::vector<PatientRecord>& CorpusSplit::patients(Split split) {
    return const_cast<std::vector<PatientRecord>&>(std::as_const(*this).patients(split));
}

std::size_t CorpusSplit::study_count(Split split) const {
    std::size_t n = 0;
    for (const auto& p : patients(split)) n += p.studies.size();
    return n;
}

Vocab build_vocab(const std::vector<PatientRecord>& train, const Grammar& grammar) {
    std::set<std::string> seen;
    for (const auto& p : train) {
        for (const auto& s : p.studies) {
            for (const auto& t : s.report) {
                if (t != kEos) seen.insert(t);
            }
        }
    }
    Vocab vocab;
    for (const auto& t : seen) vocab.add(t);
    for (const auto& t : grammar.closed_vocabulary()) vocab.add(t);
    return vocab;
}

CorpusSplit build_corpus(const CorpusConfig& config, const Grammar& grammar) {
    config.validate();
    CorpusSplit corpus;
    corpus.config = config;
    int next_id = 0;
    auto fill = [&](std::vector<PatientRecord>& out, int count) {
        for (int i = 0; i < count; ++i, ++next_id) {
            out.push_back(gen_patient(derive_seed(config.seed, 0xC0, next_id), next_id, grammar, config.gen));
        }
    };
    fill(corpus.train, config.train_patients);
    fill(corpus.val, config.val_patients);
    fill(corpus.test, config.test_patients);
    corpus.vocab = build_vocab(corpus.train, grammar);
    return corpus;
}

void write_image(const Image& img, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out.write(kImageMagic, sizeof kImageMagic);
    write_u32(out, kImageVersion);
    write_u32(out, static_cast<std::uint32_t>(img.height));
    write_u32(out, static_cast<std::uint32_t>(img.width));
    write_u32(out, static_cast<std::uint32_t>(img.channels));
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size() * sizeof(float)));
}

Image read_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    char magic[sizeof kImageMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kImageMagic, sizeof magic) != 0) {
        throw Error(ErrorKind::data, "bad image magic in " + path.string());
    }
    if (read_u32(in, path) != kImageVersion) throw Error(ErrorKind::data, "unsupported image version in " + path.string());
    Image img;
    img.height = static_cast<int>(read_u32(in, path));
    img.width = static_cast<int>(read_u32(in, path));
    img.channels = static_cast<int>(read_u32(in, path));
    img.pixels.resize(static_cast<std::size_t>(img.height) * img.width * img.channels);
    if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
                 static_cast<std::streamsize>(img.pixels.size() * sizeof(float)))) {
        throw Error(ErrorKind::data, "truncated pixels in " + path.string());
    }
    return img;
}

std::string format_record(const StudyRecord& study) {
    const auto& cat = default_catalog();
    std::ostringstream s;
    s << "STUDY\t" << study.patient_id << "\t" << study.study_index << "\t" << study.anatomy_seed << "\n";
    s << "REPORT\t" << join(study.report) << "\n";
    for (const auto& l : study.labels) {
        s << "LABEL\t" << cat.findings[static_cast<std::size_t>(l.finding)] << "\t" << cat.region_tag(l.region) << "\t"
          << (l.present ? "present" : "absent") << "\t" << cat.severities[static_cast<std::size_t>(l.severity)] << "\n";
    }
    for (const auto& t : study.tuples) s << "TUPLE\t" << t.entity << "\t" << t.relation << "\t" << t.region << "\n";
    for (const auto& p : study.phrases) s << "PHRASE\t" << join(p) << "\n";
    return s.str();
}

StudyRecord parse_record(const std::string& text) {
    const auto& cat = default_catalog();
    StudyRecord s;
    std::istringstream in(text);
    std::string line;
    bool have_study = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        const auto& kind = f[0];
        auto need = [&](std::size_t n) {
            if (f.size() != n) throw Error(ErrorKind::data, "malformed " + kind + " line: " + line);
        };
        if (kind == "STUDY") {
            need(4);
            s.patient_id = std::stoi(f[1]);
            s.study_index = std::stoi(f[2]);
            s.anatomy_seed = std::stoull(f[3]);
            have_study = true;
        } else if (kind == "REPORT") {
            need(2);
            s.report = split_ws(f[1]);
        } else if (kind == "LABEL") {
            need(5);
            FindingLabel l;
            l.finding = cat.find_finding(f[1]);
            l.region = cat.find_region_tag(f[2]);
            l.present = f[3] == "present";
            l.severity = cat.find_severity(f[4]);
            if (l.finding < 0 || l.region < 0 || l.severity < 0 || (f[3] != "present" && f[3] != "absent")) {
                throw Error(ErrorKind::data, "bad LABEL line: " + line);
            }
            s.labels.push_back(l);
        } else if (kind == "TUPLE") {
            need(4);
            s.tuples.push_back({f[1], f[2], f[3]});
        } else if (kind == "PHRASE") {
            need(2);
            s.phrases.push_back(split_ws(f[1]));
        } else {
            throw Error(ErrorKind::data, "unknown record kind '" + kind + "'");
        }
    }
    if (!have_study) throw Error(ErrorKind::data, "record without STUDY line");
    return s;
}

void write_corpus(const CorpusSplit& corpus, const fs::path& dir) {
    fs::create_directories(dir);
    for (Split split : {Split::train, Split::val, Split::test}) {
        const fs::path split_dir = dir / to_string(split);
        fs::remove_all(split_dir);
        for (const auto& p : corpus.patients(split)) {
            const fs::path pdir = split_dir / std::to_string(p.patient_id);
            fs::create_directories(pdir);
            for (const auto& s : p.studies) {
                write_image(s.image, pdir / (std::to_string(s.study_index) + ".img"));
                write_text(pdir / (std::to_string(s.study_index) + ".rec"), format_record(s));
            }
        }
    }
    std::string vocab;
    for (const auto& t : corpus.vocab.tokens()) vocab += t + "\n";
    write_text(dir / "vocab.txt", vocab);
    std::ostringstream manifest;
    manifest << "format=s2d-corpus\nversion=1\n" << corpus.config.echo();
    for (Split split : {Split::train, Split::val, Split::test}) {
        manifest << "studies." << to_string(split) << "=" << corpus.study_count(split) << "\n";
    }
    write_text(dir / "manifest", manifest.str());
}

bool corpus_exists(const fs::path& dir) {
    return fs::exists(dir / "manifest") && fs::exists(dir / "vocab.txt") && fs::is_directory(dir / "train");
}

CorpusSplit load_corpus(const fs::path& dir) {
    if (!corpus_exists(dir)) throw Error(ErrorKind::io, "no corpus at " + dir.string());
    std::map<std::string, std::string> kv;
    {
        std::istringstream in(read_text(dir / "manifest"));
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find('=');
            if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
    }
    auto get = [&](const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) throw Error(ErrorKind::data, "manifest lacks '" + k + "'");
        return it->second;
    };
    CorpusSplit corpus;
    auto& c = corpus.config;
    c.train_patients = std::stoi(get("corpus.train_patients"));
    c.val_patients = std::stoi(get("corpus.val_patients"));
    c.test_patients = std::stoi(get("corpus.test_patients"));
    c.total_patients = std::stoi(get("corpus.total_patients"));
    c.gen.min_studies = std::stoi(get("corpus.min_studies"));
    c.gen.max_studies = std::stoi(get("corpus.max_studies"));
    c.gen.max_labels = std::stoi(get("corpus.max_labels"));
    c.gen.image_size = std::stoi(get("corpus.image_size"));
    c.gen.patch_size = std::stoi(get("corpus.patch_size"));
    c.seed = std::stoull(get("corpus.seed"));

    std::vector<std::string> tokens;
    {
        std::istringstream in(read_text(dir / "vocab.txt"));
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty()) tokens.push_back(line);
        }
    }
    corpus.vocab = Vocab(tokens);

    for (Split split : {Split::train, Split::val, Split::test}) {
        auto& out = corpus.patients(split);
        const fs::path split_dir = dir / to_string(split);
        if (!fs::exists(split_dir)) continue;
        for (int pid : numeric_entries(split_dir, "")) {
            const fs::path pdir = split_dir / std::to_string(pid);
            PatientRecord p;
            p.patient_id = pid;
            for (int idx : numeric_entries(pdir, ".rec")) {
                StudyRecord s = parse_record(read_text(pdir / (std::to_string(idx) + ".rec")));
                s.image = read_image(pdir / (std::to_string(idx) + ".img"));
                if (s.patient_id != pid || s.study_index != idx) {
                    throw Error(ErrorKind::data, "record identity does not match its path in " + pdir.string());
                }
                p.anatomy_seed = s.anatomy_seed;
                p.studies.push_back(std::move(s));
            }
            out.push_back(std::move(p));
        }
        const auto expected = kv.find(std::string("studies.") + to_string(split));
        if (expected != kv.end() && std::to_string(corpus.study_count(split)) != expected->second) {
            throw Error(ErrorKind::data, std::string("study count of split ") + to_string(split) +
                                             " disagrees with the manifest");
        }
    }
    return corpus;
}

}  // namespace s2d::syndata
