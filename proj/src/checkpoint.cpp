#include "endx/checkpoint.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "endx/common.hpp"

namespace endx {
namespace {

constexpr char kMagic[4] = {'E', 'N', 'D', 'X'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void put_f32(std::ostream& out, float v) {
    static_assert(sizeof(float) == 4);
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) fail(path + ": truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
    std::uint64_t lo = get_u32(in, path);
    std::uint64_t hi = get_u32(in, path);
    return lo | (hi << 32);
}

float get_f32(std::istream& in, const std::string& path) {
    std::uint32_t bits = get_u32(in, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string get_bytes(std::istream& in, std::size_t n, const std::string& path) {
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) fail(path + ": truncated checkpoint");
    return s;
}

/// The expected tensor inventory for a config: name → (rows, cols).
std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> expected_shapes(
    const ModelConfig& cfg) {
    ParameterStore<float> scratch;
    register_parameters(scratch, cfg, /*seed=*/0);
    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> out;
    for (const auto& [name, entry] : scratch)
        out[name] = {entry.value.rows(), entry.value.cols()};
    return out;
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& params,
                     const ModelConfig& config, std::uint64_t vocab_hash,
                     std::uint64_t train_steps, const std::string& path) {
    config.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(path + ": cannot open for writing");

    nlohmann::json header;
    header["model"] = config.to_json();
    header["vocab_hash"] = vocab_hash;
    header["train_steps"] = train_steps;
    header["num_params"] = params.size();
    const std::string header_bytes = header.dump();

    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, header_bytes.size());
    out.write(header_bytes.data(),
              static_cast<std::streamsize>(header_bytes.size()));

    for (const auto& [name, entry] : params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, 2);  // rank: every tensor in the store is a matrix
        put_u64(out, static_cast<std::uint64_t>(entry.value.rows()));
        put_u64(out, static_cast<std::uint64_t>(entry.value.cols()));
        for (Eigen::Index i = 0; i < entry.value.rows(); ++i)
            for (Eigen::Index j = 0; j < entry.value.cols(); ++j)
                put_f32(out, entry.value(i, j));
    }
    out.flush();
    if (!out) fail(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        fail(path + ": not a checkpoint");
    const std::uint32_t version = get_u32(in, path);
    if (version != kVersion)
        fail(path + ": checkpoint format version " + std::to_string(version) +
             " is not supported (expected " + std::to_string(kVersion) + ")");

    const std::uint64_t header_len = get_u64(in, path);
    const std::string header_bytes = get_bytes(in, header_len, path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_bytes);
    } catch (const nlohmann::json::exception& e) {
        fail(path + ": corrupt checkpoint header: " + e.what());
    }
    for (const char* key : {"model", "vocab_hash", "train_steps", "num_params"})
        if (!header.contains(key))
            fail(path + ": checkpoint header missing '" + key + "'");

    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_json(header.at("model"));
    ckpt.vocab_hash = header.at("vocab_hash").get<std::uint64_t>();
    ckpt.train_steps = header.at("train_steps").get<std::uint64_t>();
    const auto num_params = header.at("num_params").get<std::uint64_t>();

    for (std::uint64_t k = 0; k < num_params; ++k) {
        const std::uint32_t name_len = get_u32(in, path);
        const std::string name = get_bytes(in, name_len, path);
        const std::uint32_t rank = get_u32(in, path);
        if (rank != 2)
            fail(path + ": parameter '" + name + "' has unsupported rank " +
                 std::to_string(rank));
        const auto rows = static_cast<Eigen::Index>(get_u64(in, path));
        const auto cols = static_cast<Eigen::Index>(get_u64(in, path));
        if (rows < 1 || cols < 1)
            fail(path + ": parameter '" + name + "' has a bad shape");
        Mat<float> value(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                value(i, j) = get_f32(in, path);
        ckpt.params.adopt(name, std::move(value));
    }

    const auto expected = expected_shapes(ckpt.config);
    for (const auto& [name, shape] : expected) {
        if (!ckpt.params.contains(name))
            fail(path + ": checkpoint is missing parameter '" + name + "'");
        const auto& v = ckpt.params.value(name);
        if (v.rows() != shape.first || v.cols() != shape.second)
            fail(path + ": parameter '" + name + "' has shape " +
                 std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                 ", expected " + std::to_string(shape.first) + "x" +
                 std::to_string(shape.second));
    }
    if (ckpt.params.size() != expected.size())
        for (const auto& name : ckpt.params.names())
            if (!expected.count(name))
                fail(path + ": checkpoint has unexpected parameter '" + name +
                     "'");
    return ckpt;
}

std::uint64_t checkpoint_file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path + ": cannot open file");
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a offset basis
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        h = fnv1a64_bytes(buf, static_cast<std::size_t>(in.gcount()), h);
        if (!in) break;
    }
    return h;
}

}  // namespace endx
