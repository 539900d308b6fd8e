#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "relcp/autodiff.hpp"
#include "relcp/checkpoint.hpp"

using namespace relcp;
using relcp::testing::TempDir;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.manifest = {{"kind", "pretrain"}, {"note", "sample"}, {"seed", 42}};
    Tensor a(2, 3);
    double v = 0.5;
    for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c) a.at(r, c) = v += 1.25;
    ck.entries.emplace_back("layer.w", a);
    Tensor b(1, 4);
    b.at(0, 0) = -1e300;
    b.at(0, 1) = 1e-300;
    b.at(0, 2) = 0.0;
    b.at(0, 3) = 3.141592653589793;
    ck.entries.emplace_back("layer.b", b);
    return ck;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint round trip preserves bytes and values") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    const Checkpoint ck = sample_checkpoint();
    save_checkpoint(ck, path);

    const Checkpoint back = load_checkpoint(path);
    CHECK(back.manifest == ck.manifest);
    REQUIRE(back.entries.size() == ck.entries.size());
    for (size_t i = 0; i < ck.entries.size(); ++i) {
        CHECK(back.entries[i].first == ck.entries[i].first);
        const Tensor& a = ck.entries[i].second;
        const Tensor& b = back.entries[i].second;
        REQUIRE(a.same_shape(b));
        CHECK(std::memcmp(a.data.data(), b.data.data(),
                          a.data.size() * sizeof(double)) == 0);
    }

    // resaving the identical content produces identical bytes
    const std::string path2 = dir.str() + "/model2.ck";
    save_checkpoint(back, path2);
    CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("checkpoint leaves no temp file behind") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    save_checkpoint(sample_checkpoint(), path);
    CHECK(std::filesystem::exists(path));
    CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
}

TEST_CASE("missing file raises IoError") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/nowhere.ck"), IoError);
}

TEST_CASE("bad magic rejected") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    save_checkpoint(sample_checkpoint(), path);
    std::string bytes = read_bytes(path);
    bytes[0] = 'X';
    relcp::testing::write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), CorruptPayload);
}

TEST_CASE("unknown format version rejected") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    save_checkpoint(sample_checkpoint(), path);
    std::string bytes = read_bytes(path);
    bytes[4] = static_cast<char>(kCheckpointFormatVersion + 1);
    // keep the trailer honest so the version check is what trips
    const uint64_t sum = fnv1a(bytes.data(), bytes.size() - 8);
    std::memcpy(bytes.data() + bytes.size() - 8, &sum, 8);
    relcp::testing::write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), VersionMismatch);
}

TEST_CASE("payload bit flip breaks the checksum") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    save_checkpoint(sample_checkpoint(), path);
    std::string bytes = read_bytes(path);
    bytes[bytes.size() / 2] ^= 0x40;
    relcp::testing::write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), CorruptPayload);
}

TEST_CASE("truncation detected at any length") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    save_checkpoint(sample_checkpoint(), path);
    const std::string bytes = read_bytes(path);
    for (const size_t keep : {size_t(0), size_t(3), size_t(7), bytes.size() / 2,
                              bytes.size() - 1}) {
        relcp::testing::write_file(path, bytes.substr(0, keep));
        CHECK_THROWS_AS(load_checkpoint(path), CorruptPayload);
    }
}

TEST_CASE("trailing garbage rejected") {
    TempDir dir;
    const std::string path = dir.str() + "/model.ck";
    save_checkpoint(sample_checkpoint(), path);
    relcp::testing::write_file(path, read_bytes(path) + "extra");
    CHECK_THROWS_AS(load_checkpoint(path), CorruptPayload);
}

TEST_CASE("find and at behave") {
    const Checkpoint ck = sample_checkpoint();
    REQUIRE(ck.find("layer.w") != nullptr);
    CHECK(ck.find("layer.w")->rows == 2);
    CHECK(ck.find("missing") == nullptr);
    CHECK(ck.at("layer.b").cols == 4);
    CHECK_THROWS_AS(ck.at("missing"), VersionMismatch);
}

TEST_CASE("store round trip through a checkpoint") {
    ParamStore store;
    Rng rng(77);
    store.get_or_create("a.w", 3, 2, [&] { return glorot_uniform(3, 2, rng); });
    store.get_or_create("a.b", 1, 2, [&] { return Tensor(1, 2); });
    const Checkpoint ck = checkpoint_from_store(store, {{"kind", "test"}});
    REQUIRE(ck.entries.size() == 2);
    CHECK(ck.entries[0].first == "a.w");  // creation order kept

    ParamStore other;
    other.get_or_create("a.w", 3, 2, [&] { return Tensor(3, 2); });
    other.get_or_create("a.b", 1, 2, [&] { return Tensor::full(1, 2, 9.0); });
    load_into_store(ck, other);
    CHECK(other.at("a.w").tensor.at(2, 1) == store.at("a.w").tensor.at(2, 1));
    CHECK(other.at("a.b").tensor.at(0, 0) == 0.0);
}

TEST_CASE("load_into_store rejects mismatches") {
    ParamStore store;
    store.get_or_create("a.w", 2, 2, [&] { return Tensor(2, 2); });
    const Checkpoint ck = checkpoint_from_store(store, {});

    ParamStore missing;  // no parameters at all
    CHECK_THROWS_AS(load_into_store(ck, missing), VersionMismatch);

    ParamStore renamed;
    renamed.get_or_create("b.w", 2, 2, [&] { return Tensor(2, 2); });
    CHECK_THROWS_AS(load_into_store(ck, renamed), VersionMismatch);

    ParamStore reshaped;
    reshaped.get_or_create("a.w", 2, 3, [&] { return Tensor(2, 3); });
    CHECK_THROWS_AS(load_into_store(ck, reshaped), VersionMismatch);
}

TEST_CASE("fnv1a matches reference vectors") {
    // reference values for the 64-bit offset-basis FNV-1a
    CHECK(fnv1a("", 0) == 14695981039346656037ULL);
    CHECK(fnv1a("a", 1) == 12638187200555641996ULL);
    CHECK(fnv1a(std::string("hello")) == 11831194018420276491ULL);
}
