#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <zlib.h>

#include "cftlab/engine.hpp"
#include "cftlab/error.hpp"

namespace cftlab::engine {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'T', 'L'};
constexpr uint32_t kVersion = 1;

// little-endian writers into a byte buffer
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_str(std::vector<uint8_t>& b, const std::string& s) {
    put_u32(b, static_cast<uint32_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
}
void put_f32(std::vector<uint8_t>& b, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(b, u);
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n, const char* what) {
        if (pos + n > b.size())
            fail_input("checkpoint " + path + ": truncated while reading " + what);
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str(const char* what) {
        uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(&b[pos]), n);
        pos += n;
        return s;
    }
    float f32(const char* what) {
        uint32_t u = u32(what);
        float f;
        std::memcpy(&f, &u, 4);
        return f;
    }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);

    // config block: model config, provenance, vocabulary
    std::vector<uint8_t> cb;
    put_u32(cb, static_cast<uint32_t>(ckpt.config.n_layers));
    put_u32(cb, static_cast<uint32_t>(ckpt.config.n_heads));
    put_u32(cb, static_cast<uint32_t>(ckpt.config.d_model));
    put_u32(cb, static_cast<uint32_t>(ckpt.config.d_ff));
    put_u32(cb, static_cast<uint32_t>(ckpt.config.vocab_size));
    put_u32(cb, static_cast<uint32_t>(ckpt.config.max_seq_len));
    put_str(cb, ckpt.prov.phase_tag);
    put_str(cb, ckpt.prov.parent_checkpoint_id);
    put_str(cb, ckpt.prov.dataset_id);
    put_u64(cb, ckpt.prov.seed);
    put_u32(cb, static_cast<uint32_t>(ckpt.vocab.words.size()));
    for (const auto& w : ckpt.vocab.words) put_str(cb, w);
    put_u32(buf, static_cast<uint32_t>(cb.size()));
    buf.insert(buf.end(), cb.begin(), cb.end());

    // tensor table, offsets relative to payload start
    put_u32(buf, static_cast<uint32_t>(ckpt.tensors.size()));
    uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        put_str(buf, name);
        put_u32(buf, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) put_u64(buf, static_cast<uint64_t>(d));
        put_u64(buf, offset);
        offset += static_cast<uint64_t>(t.numel()) * 4;
    }

    for (const auto& [name, t] : ckpt.tensors)
        for (double x : t.v) put_f32(buf, static_cast<float>(x));

    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write checkpoint: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    require(out.good(), "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());

    require(buf.size() >= 12, "checkpoint " + path + ": file too small");
    require(std::memcmp(buf.data(), kMagic, 4) == 0,
            "checkpoint " + path + ": bad magic bytes");

    // structural parse first so truncation reports what is missing; CRC is
    // verified at the end over everything before the trailing word
    uint32_t crc_stored = 0;
    for (int i = 0; i < 4; ++i)
        crc_stored |= static_cast<uint32_t>(buf[buf.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
    uint32_t crc_actual = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size() - 4)));
    buf.resize(buf.size() - 4);

    Reader r{buf, 4, path};
    uint32_t version = r.u32("version");
    require(version == kVersion, "checkpoint " + path + ": unsupported format version " +
                                     std::to_string(version));

    uint32_t cb_len = r.u32("config block length");
    size_t cb_end = r.pos + cb_len;
    r.need(cb_len, "config block");
    Checkpoint ckpt;
    ckpt.config.n_layers = static_cast<int>(r.u32("n_layers"));
    ckpt.config.n_heads = static_cast<int>(r.u32("n_heads"));
    ckpt.config.d_model = static_cast<int>(r.u32("d_model"));
    ckpt.config.d_ff = static_cast<int>(r.u32("d_ff"));
    ckpt.config.vocab_size = static_cast<int>(r.u32("vocab_size"));
    ckpt.config.max_seq_len = static_cast<int>(r.u32("max_seq_len"));
    ckpt.prov.phase_tag = r.str("phase_tag");
    ckpt.prov.parent_checkpoint_id = r.str("parent_checkpoint_id");
    ckpt.prov.dataset_id = r.str("dataset_id");
    ckpt.prov.seed = r.u64("seed");
    uint32_t n_words = r.u32("vocab count");
    for (uint32_t i = 0; i < n_words; ++i) ckpt.vocab.words.push_back(r.str("vocab word"));
    for (int i = 0; i < ckpt.vocab.size(); ++i)
        ckpt.vocab.index[ckpt.vocab.words[static_cast<size_t>(i)]] = i;
    require(r.pos == cb_end, "checkpoint " + path + ": config block length mismatch");
    ckpt.config.validate();

    uint32_t n_tensors = r.u32("tensor count");
    struct Entry {
        std::string name;
        std::vector<int64_t> shape;
        uint64_t offset;
        int64_t numel;
    };
    std::vector<Entry> entries;
    uint64_t total = 0;
    for (uint32_t i = 0; i < n_tensors; ++i) {
        Entry e;
        e.name = r.str("tensor name");
        uint32_t rank = r.u32("tensor rank");
        e.numel = 1;
        for (uint32_t j = 0; j < rank; ++j) {
            int64_t d = static_cast<int64_t>(r.u64("tensor dim"));
            e.shape.push_back(d);
            e.numel *= d;
        }
        e.offset = r.u64("tensor offset");
        require(e.offset == total,
                "checkpoint " + path + ": tensor '" + e.name + "' has inconsistent offset");
        total += static_cast<uint64_t>(e.numel) * 4;
        entries.push_back(std::move(e));
    }
    require(buf.size() - r.pos == total,
            "checkpoint " + path + ": truncated or oversized payload (expected " +
                std::to_string(total) + " bytes, have " +
                std::to_string(buf.size() - r.pos) + ")");

    for (const auto& e : entries) {
        Tensor t(e.shape);
        for (int64_t i = 0; i < e.numel; ++i)
            t.v[static_cast<size_t>(i)] =
                static_cast<double>(r.f32(("payload of " + e.name).c_str()));
        ckpt.tensors.emplace(e.name, std::move(t));
    }

    // shapes must match the canonical layout for the config
    for (const auto& [name, shape] : tensor_layout(ckpt.config)) {
        auto it = ckpt.tensors.find(name);
        require(it != ckpt.tensors.end(), "checkpoint " + path + ": missing tensor " + name);
        require(it->second.shape == shape,
                "checkpoint " + path + ": tensor '" + name + "' has wrong shape");
    }
    require(ckpt.tensors.size() == tensor_layout(ckpt.config).size(),
            "checkpoint " + path + ": unexpected extra tensors");
    require(crc_stored == crc_actual, "checkpoint " + path + ": CRC mismatch");
    return ckpt;
}

}  // namespace cftlab::engine
