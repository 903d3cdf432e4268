#include "adpipe/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace adpipe {

namespace {
constexpr unsigned char kMagic[4] = {0x44, 0x41, 0x44, 0x43};  // "DADC"
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::uint64_t save_checkpoint(const ParamStore<float>& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data::FormatError(0, "cannot open checkpoint for writing: " + path);
    std::uint64_t offset = 0;
    const auto put = [&](const void* p, std::size_t n) {
        out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        offset += n;
    };
    const auto put_u32 = [&](std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        put(b, 4);
    };
    const auto put_u64 = [&](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        put(b, 8);
    };

    put(kMagic, 4);
    put_u32(kVersion);
    put_u64(store.size());
    for (const auto& [name, tensor] : store) {
        put_u32(static_cast<std::uint32_t>(name.size()));
        put(name.data(), name.size());
        put_u32(static_cast<std::uint32_t>(tensor.rank()));
        for (std::size_t d : tensor.shape) put_u64(d);
        for (float v : tensor.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(bits);
        }
    }
    out.flush();
    if (!out) throw data::FormatError(offset, "checkpoint write failure");
    return offset;
}

ParamStore<float> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data::FormatError(0, "cannot open checkpoint: " + path);
    std::uint64_t offset = 0;
    const auto get = [&](void* p, std::size_t n, const char* what) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw data::FormatError(offset, std::string("truncated checkpoint while reading ") + what);
        offset += n;
    };
    const auto get_u32 = [&](const char* what) {
        unsigned char b[4];
        get(b, 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    };
    const auto get_u64 = [&](const char* what) {
        unsigned char b[8];
        get(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    };

    unsigned char magic[4];
    get(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) throw data::FormatError(0, "bad magic, not a checkpoint");
    const std::uint64_t version_off = offset;
    const std::uint32_t version = get_u32("version");
    if (version != kVersion)
        throw data::FormatError(version_off, "unsupported checkpoint version " + std::to_string(version));

    ParamStore<float> store;
    const std::uint64_t blocks = get_u64("block count");
    for (std::uint64_t b = 0; b < blocks; ++b) {
        const std::uint32_t name_len = get_u32("name length");
        std::string name(name_len, '\0');
        if (name_len) get(name.data(), name_len, "name");
        const std::uint32_t rank = get_u32("rank");
        std::vector<std::size_t> shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d)
            shape[d] = static_cast<std::size_t>(get_u64("dimension"));
        Tensor<float>& tensor = store.create(name, shape);
        for (float& v : tensor.data) {
            const std::uint32_t bits = get_u32("payload");
            std::memcpy(&v, &bits, 4);
        }
    }
    return store;
}

}  // namespace adpipe
