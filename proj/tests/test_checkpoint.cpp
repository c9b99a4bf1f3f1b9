#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "endx/checkpoint.hpp"
#include "endx/model.hpp"

using namespace endx;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.encoder.kind = EncoderKind::transformer;
    cfg.encoder.layers = 1;
    cfg.encoder.model_dim = 8;
    cfg.encoder.heads = 2;
    cfg.encoder.max_question_len = 12;
    cfg.encoder.max_answer_len = 12;
    cfg.vocab_size = 16;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

struct TempPath {
    std::string path;
    explicit TempPath(const char* name) : path(std::string("endx_test_") + name) {}
    ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("save then load restores every tensor bitwise") {
    ModelConfig cfg = tiny_config();
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 42);
    TempPath file("roundtrip.ckpt");
    save_checkpoint(ps, cfg, /*vocab_hash=*/0xabcdef22u, /*train_steps=*/37,
                    file.path);

    Checkpoint loaded = load_checkpoint(file.path);
    CHECK(loaded.vocab_hash == 0xabcdef22u);
    CHECK(loaded.train_steps == 37);
    CHECK(loaded.config.encoder.model_dim == 8);
    CHECK(loaded.params.size() == ps.size());
    for (const auto& name : ps.names()) {
        REQUIRE(loaded.params.contains(name));
        const auto& a = ps.value(name);
        const auto& b = loaded.params.value(name);
        REQUIRE(a.rows() == b.rows());
        REQUIRE(a.cols() == b.cols());
        CHECK(a.binaryExpr(b, [](float x, float y) {
                   return x == y ? 0.0f : 1.0f;
               }).sum() == 0.0f);
    }
}

TEST_CASE("save -> load -> save is byte-identical") {
    ModelConfig cfg = tiny_config();
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 7);
    TempPath first("bytes1.ckpt");
    TempPath second("bytes2.ckpt");
    save_checkpoint(ps, cfg, 11, 5, first.path);
    Checkpoint loaded = load_checkpoint(first.path);
    save_checkpoint(loaded.params, loaded.config, loaded.vocab_hash,
                    loaded.train_steps, second.path);
    CHECK(read_file(first.path) == read_file(second.path));
}

TEST_CASE("corrupted magic is rejected as not a checkpoint") {
    ModelConfig cfg = tiny_config();
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 1);
    TempPath file("magic.ckpt");
    save_checkpoint(ps, cfg, 0, 0, file.path);
    std::string bytes = read_file(file.path);
    bytes[0] = 'X';
    write_file(file.path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(file.path),
                         doctest::Contains("not a checkpoint"), Error);
}

TEST_CASE("a future format version is an explicit error") {
    ModelConfig cfg = tiny_config();
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 1);
    TempPath file("version.ckpt");
    save_checkpoint(ps, cfg, 0, 0, file.path);
    std::string bytes = read_file(file.path);
    bytes[4] = 99;  // little-endian low byte of the u32 version
    write_file(file.path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(file.path),
                         doctest::Contains("version 99 is not supported"),
                         Error);
}

TEST_CASE("truncated files and missing tensors are named errors") {
    ModelConfig cfg = tiny_config();
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 1);
    TempPath file("trunc.ckpt");
    save_checkpoint(ps, cfg, 0, 0, file.path);
    std::string bytes = read_file(file.path);
    write_file(file.path, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH_AS(load_checkpoint(file.path),
                         doctest::Contains("truncated"), Error);

    // A store missing one expected tensor fails the inventory check.
    ParameterStore<float> partial;
    register_parameters(partial, cfg, 1);
    ParameterStore<float> rebuilt;
    for (const auto& name : partial.names())
        if (name != "dual.agg.q.w1") rebuilt.adopt(name, partial.value(name));
    TempPath missing("missing.ckpt");
    save_checkpoint(rebuilt, cfg, 0, 0, missing.path);
    CHECK_THROWS_WITH_AS(load_checkpoint(missing.path),
                         doctest::Contains("missing parameter 'dual.agg.q.w1'"),
                         Error);

    CHECK_THROWS_AS(load_checkpoint("no_such_file.ckpt"), Error);
}

TEST_CASE("the file hash fingerprints content") {
    ModelConfig cfg = tiny_config();
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 3);
    TempPath a("hash_a.ckpt");
    TempPath b("hash_b.ckpt");
    save_checkpoint(ps, cfg, 0, 0, a.path);
    save_checkpoint(ps, cfg, 0, 0, b.path);
    CHECK(checkpoint_file_hash(a.path) == checkpoint_file_hash(b.path));

    std::string bytes = read_file(b.path);
    bytes[bytes.size() - 1] = static_cast<char>(bytes[bytes.size() - 1] ^ 1);
    write_file(b.path, bytes);
    CHECK(checkpoint_file_hash(a.path) != checkpoint_file_hash(b.path));
}

TEST_CASE("baseline configs save without cross tensors") {
    ModelConfig cfg = tiny_config();
    cfg.weights.cross = 0.0;
    cfg.weights.gam = 0.0;  // dual-only: no cross tower registered
    ParameterStore<float> ps;
    register_parameters(ps, cfg, 9);
    for (const auto& name : ps.names()) CHECK(name.rfind("cross", 0) != 0);
    TempPath file("dualonly.ckpt");
    save_checkpoint(ps, cfg, 0, 0, file.path);
    Checkpoint loaded = load_checkpoint(file.path);
    CHECK(loaded.params.size() == ps.size());
    CHECK_FALSE(loaded.config.uses_cross_tower());
}

TEST_SUITE_END();
