#include "eva/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace eva {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'A', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_string(std::ofstream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Reader {
    std::ifstream in;
    std::string path;

    void need(char* buf, std::size_t n, const char* what) {
        in.read(buf, static_cast<std::streamsize>(n));
        if (!in)
            throw std::runtime_error("checkpoint " + path + ": truncated while reading " + what);
    }
    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        need(reinterpret_cast<char*>(b), 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        need(reinterpret_cast<char*>(b), 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    std::string str(const char* what) {
        std::uint32_t n = u32(what);
        std::string s(n, '\0');
        if (n) need(s.data(), n, what);
        return s;
    }
};

}  // namespace

const Checkpoint::Entry* Checkpoint::find(const std::string& name) const {
    for (const Entry& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

Checkpoint snapshot(const ag::ParameterStore& store, std::string config_json, std::uint64_t seed,
                    std::uint64_t epoch) {
    Checkpoint c;
    c.config_json = std::move(config_json);
    c.seed = seed;
    c.epoch = epoch;
    for (const auto& p : store)
        c.entries.push_back({p.name, p.value.shape, p.trainable, p.value.data});
    return c;
}

void restore(const Checkpoint& ckpt, ag::ParameterStore& store) {
    if (ckpt.entries.size() != store.count())
        throw std::runtime_error("checkpoint restore: parameter count mismatch (" +
                                 std::to_string(ckpt.entries.size()) + " vs " +
                                 std::to_string(store.count()) + ")");
    for (const Checkpoint::Entry& e : ckpt.entries) {
        if (!store.has(e.name))
            throw std::runtime_error("checkpoint restore: unknown parameter " + e.name);
        auto& p = store.at(store.id_of(e.name));
        if (p.value.shape != e.shape)
            throw std::runtime_error("checkpoint restore: shape mismatch for " + e.name + " (" +
                                     ag::shape_str(p.value.shape) + " vs " +
                                     ag::shape_str(e.shape) + ")");
        p.value.data = e.data;
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, ckpt.seed);
    put_u64(out, ckpt.epoch);
    put_string(out, ckpt.config_json);
    put_u64(out, ckpt.entries.size());
    for (const auto& e : ckpt.entries) {
        put_string(out, e.name);
        out.put(e.trainable ? 1 : 0);
        put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
        for (std::size_t d : e.shape) put_u64(out, d);
    }
    for (const auto& e : ckpt.entries)
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r;
    r.path = path;
    r.in.open(path, std::ios::binary);
    if (!r.in) throw std::runtime_error("cannot open checkpoint " + path);

    char magic[4];
    r.need(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint " + path + ": bad magic, not an EVA1 file");
    std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw std::runtime_error("checkpoint " + path + ": unsupported version " +
                                 std::to_string(version));

    Checkpoint c;
    c.seed = r.u64("seed");
    c.epoch = r.u64("epoch");
    c.config_json = r.str("config");
    std::uint64_t n = r.u64("entry count");
    for (std::uint64_t i = 0; i < n; ++i) {
        Checkpoint::Entry e;
        e.name = r.str("entry name");
        char flag;
        r.need(&flag, 1, "trainable flag");
        e.trainable = flag != 0;
        std::uint32_t rank = r.u32("rank");
        for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(r.u64("extent"));
        c.entries.push_back(std::move(e));
    }
    for (auto& e : c.entries) {
        e.data.resize(ag::shape_numel(e.shape));
        r.need(reinterpret_cast<char*>(e.data.data()), e.data.size() * sizeof(double),
               ("payload of " + e.name).c_str());
    }
    return c;
}

}  // namespace eva
