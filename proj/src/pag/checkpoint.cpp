#include "s2d/pag/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "s2d/core/error.hpp"

namespace s2d::pag {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::uint32_t kDtypeF64 = 2;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    template <typename T>
    T get(const std::string& what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n, const std::string& what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    const char* at() const { return bytes_.data() + pos_; }
    void skip(std::size_t n, const std::string& what) {
        need(n, what);
        pos_ += n;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    [[noreturn]] void fail(const std::string& msg) const { throw Error(ErrorKind::checkpoint, origin_ + ": " + msg); }

private:
    void need(std::size_t n, const std::string& what) const {
        if (bytes_.size() - pos_ < n) fail("truncated at " + what);
    }
    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

struct TableEntry {
    std::string name;
    std::uint32_t dtype = 0;
    std::vector<std::uint32_t> dims;
    std::uint64_t bytes = 0;
    std::uint64_t checksum = 0;
};

}  // namespace

Checkpoint make_checkpoint(const ParamStore& store, const AdamW* optimizer, std::map<std::string, std::string> manifest) {
    Checkpoint c;
    for (const Parameter* p : store.all()) c.tensors.emplace(p->name, p->value);
    if (optimizer) {
        for (const auto& [name, mo] : optimizer->moments()) {
            c.tensors.emplace("opt/m/" + name, mo.m);
            c.tensors.emplace("opt/v/" + name, mo.v);
        }
        manifest["optimizer_steps"] = std::to_string(optimizer->steps());
    }
    c.manifest = std::move(manifest);
    return c;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamStore& store, AdamW* optimizer,
                      const std::vector<std::string>& skip_namespaces) {
    for (const auto& [name, value] : ckpt.tensors) {
        if (name.rfind("opt/", 0) == 0) {
            if (!optimizer) continue;
            const bool is_m = name.rfind("opt/m/", 0) == 0;
            auto& mo = optimizer->moments()[name.substr(6)];
            (is_m ? mo.m : mo.v) = value;
            continue;
        }
        if (matches_any(name, skip_namespaces)) continue;
        Parameter* p = store.find(name);
        if (!p) throw Error(ErrorKind::checkpoint, "checkpoint entry " + name + " has no matching parameter");
        if (p->value.rows() != value.rows() || p->value.cols() != value.cols()) {
            throw Error(ErrorKind::checkpoint, "checkpoint entry " + name + " has shape " + std::to_string(value.rows()) +
                                                   "x" + std::to_string(value.cols()) + ", model expects " +
                                                   std::to_string(p->value.rows()) + "x" +
                                                   std::to_string(p->value.cols()));
        }
        p->value = value;
    }
    if (optimizer) {
        auto it = ckpt.manifest.find("optimizer_steps");
        if (it != ckpt.manifest.end()) optimizer->set_steps(std::stol(it->second));
    }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    const std::uint32_t dtype = sizeof(Real) == 4 ? kDtypeF32 : kDtypeF64;
    for (const auto& [name, m] : ckpt.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, dtype);
        put<std::uint32_t>(out, 2);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
        put<std::uint64_t>(out, static_cast<std::uint64_t>(m.size()) * sizeof(Real));
        put<std::uint64_t>(out, fnv1a(m));
    }
    for (const auto& [name, m] : ckpt.tensors) {
        out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(Real));
    }
    std::string manifest;
    for (const auto& [k, v] : ckpt.manifest) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw Error(ErrorKind::checkpoint, "manifest key/value not serializable: " + k);
        }
        manifest += k + "=" + v + "\n";
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(manifest.size()));
    out += manifest;
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
    Reader r(bytes, origin);
    if (r.str(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
        r.fail("bad magic (not a checkpoint)");
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("entry count");
    std::vector<TableEntry> table(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string where = "entry table row " + std::to_string(i);
        auto& e = table[i];
        const auto len = r.get<std::uint32_t>(where);
        if (len > 4096) r.fail(where + ": implausible name length");
        e.name = r.str(len, where);
        e.dtype = r.get<std::uint32_t>(e.name);
        const auto rank = r.get<std::uint32_t>(e.name);
        if (rank > 2) r.fail("entry " + e.name + ": unsupported rank " + std::to_string(rank));
        std::uint64_t elems = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            e.dims.push_back(r.get<std::uint32_t>(e.name));
            elems *= e.dims.back();
        }
        e.bytes = r.get<std::uint64_t>(e.name);
        e.checksum = r.get<std::uint64_t>(e.name);
        const std::uint64_t width = e.dtype == kDtypeF32 ? 4 : e.dtype == kDtypeF64 ? 8 : 0;
        if (width == 0) r.fail("entry " + e.name + ": unknown dtype code " + std::to_string(e.dtype));
        if (elems * width != e.bytes) r.fail("entry " + e.name + ": byte length disagrees with its shape");
    }
    Checkpoint c;
    for (const auto& e : table) {
        const Eigen::Index rows = e.dims.size() == 2 ? e.dims[0] : 1;
        const Eigen::Index cols = e.dims.size() == 2 ? e.dims[1] : (e.dims.empty() ? 1 : e.dims[0]);
        if (r.remaining() < e.bytes) r.fail("entry " + e.name + ": payload truncated");
        Matrix m(rows, cols);
        if (e.dtype == kDtypeF32) {
            Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(rows, cols);
            std::memcpy(f.data(), r.at(), e.bytes);
            m = f.cast<Real>();
        } else {
            Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> d(rows, cols);
            std::memcpy(d.data(), r.at(), e.bytes);
            m = d.cast<Real>();
        }
        const bool same_width = (e.dtype == kDtypeF32) == (sizeof(Real) == 4);
        if (same_width && fnv1a(m) != e.checksum) r.fail("entry " + e.name + ": payload checksum mismatch");
        r.skip(e.bytes, e.name);
        c.tensors.emplace(e.name, std::move(m));
    }
    const auto mlen = r.get<std::uint32_t>("manifest length");
    std::istringstream manifest(r.str(mlen, "manifest"));
    if (r.remaining() != 0) r.fail("trailing bytes after manifest");
    for (std::string line; std::getline(manifest, line);) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) r.fail("malformed manifest line: " + line);
        c.manifest[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw Error(ErrorKind::io, "cannot write " + tmp);
        const std::string bytes = serialize_checkpoint(ckpt);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw Error(ErrorKind::io, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::checkpoint, "cannot open checkpoint " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace s2d::pag
