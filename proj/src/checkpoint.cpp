#include "relcp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "relcp/errors.hpp"

namespace relcp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian");
static_assert(sizeof(double) == 8);

namespace {

constexpr char kMagic[4] = {'R', 'C', 'P', 'K'};

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <typename T>
void put_pod(std::string& out, T v) {
    put_bytes(out, &v, sizeof(T));
}

class Reader {
  public:
    Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    void read(void* p, size_t n) {
        if (pos_ + n > buf_.size())
            throw CorruptPayload("checkpoint " + path_ + " is truncated");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    template <typename T>
    T pod() {
        T v;
        read(&v, sizeof(T));
        return v;
    }

    std::string str(size_t n) {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

    size_t pos() const { return pos_; }

  private:
    const std::string& buf_;
    std::string path_;
    size_t pos_ = 0;
};

}  // namespace

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
    uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw VersionMismatch("checkpoint has no tensor named '" + name + "'");
    return *t;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::string body;
    put_bytes(body, kMagic, 4);
    put_pod<uint32_t>(body, kCheckpointFormatVersion);
    const std::string manifest = ck.manifest.dump();
    put_pod<uint64_t>(body, manifest.size());
    put_bytes(body, manifest.data(), manifest.size());
    put_pod<uint64_t>(body, ck.entries.size());
    for (const auto& [name, t] : ck.entries) {
        put_pod<uint32_t>(body, static_cast<uint32_t>(name.size()));
        put_bytes(body, name.data(), name.size());
        put_pod<uint32_t>(body, static_cast<uint32_t>(t.rows));
        put_pod<uint32_t>(body, static_cast<uint32_t>(t.cols));
        put_bytes(body, t.data.data(), t.data.size() * sizeof(double));
    }
    put_pod<uint64_t>(body, fnv1a(body.data(), body.size()));

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp + " for writing");
        out.write(body.data(), static_cast<std::streamsize>(body.size()));
        if (!out) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4 + sizeof(uint32_t) + sizeof(uint64_t))
        throw CorruptPayload("checkpoint " + path + " is truncated");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw CorruptPayload("checkpoint " + path + " has a bad signature");
    if (buf.size() < sizeof(uint64_t))
        throw CorruptPayload("checkpoint " + path + " is truncated");
    const size_t body_len = buf.size() - sizeof(uint64_t);
    uint64_t stored_sum;
    std::memcpy(&stored_sum, buf.data() + body_len, sizeof(uint64_t));
    if (fnv1a(buf.data(), body_len) != stored_sum)
        throw CorruptPayload("checkpoint " + path + " fails its checksum");

    Reader r(buf, path);
    char magic[4];
    r.read(magic, 4);
    const uint32_t version = r.pod<uint32_t>();
    if (version != kCheckpointFormatVersion)
        throw VersionMismatch("checkpoint " + path + " has format version " +
                              std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointFormatVersion));

    Checkpoint ck;
    const uint64_t manifest_len = r.pod<uint64_t>();
    if (manifest_len > body_len) throw CorruptPayload("checkpoint " + path + " is truncated");
    const std::string manifest = r.str(manifest_len);
    try {
        ck.manifest = nlohmann::json::parse(manifest);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptPayload("checkpoint " + path + " manifest: " + e.what());
    }
    const uint64_t n_entries = r.pod<uint64_t>();
    for (uint64_t i = 0; i < n_entries; ++i) {
        const uint32_t name_len = r.pod<uint32_t>();
        if (name_len > body_len) throw CorruptPayload("checkpoint " + path + " is truncated");
        std::string name = r.str(name_len);
        const auto rows = static_cast<int>(r.pod<uint32_t>());
        const auto cols = static_cast<int>(r.pod<uint32_t>());
        if (rows < 0 || cols < 0 ||
            static_cast<uint64_t>(rows) * static_cast<uint64_t>(cols) >
                body_len / sizeof(double) + 1)
            throw CorruptPayload("checkpoint " + path + " has an implausible tensor shape");
        Tensor t(rows, cols);
        r.read(t.data.data(), t.data.size() * sizeof(double));
        ck.entries.emplace_back(std::move(name), std::move(t));
    }
    if (r.pos() != body_len)
        throw CorruptPayload("checkpoint " + path + " has trailing garbage");
    return ck;
}

Checkpoint checkpoint_from_store(const ParamStore& store, nlohmann::json manifest) {
    Checkpoint ck;
    ck.manifest = std::move(manifest);
    for (const auto& p : store.all()) ck.entries.emplace_back(p->name, p->tensor);
    return ck;
}

void load_into_store(const Checkpoint& ck, ParamStore& store) {
    if (ck.entries.size() != store.size())
        throw VersionMismatch("checkpoint holds " + std::to_string(ck.entries.size()) +
                              " tensors, model expects " + std::to_string(store.size()));
    for (const auto& [name, t] : ck.entries) {
        Parameter* p = store.find(name);
        if (!p) throw VersionMismatch("checkpoint tensor '" + name + "' has no matching parameter");
        if (!p->tensor.same_shape(t))
            throw VersionMismatch("checkpoint tensor '" + name + "' has shape " + shape_str(t) +
                                  ", parameter expects " + shape_str(p->tensor));
        p->tensor = t;
    }
}

}  // namespace relcp
