#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <chrono>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "relcp/checkpoint.hpp"
#include "relcp/encoders.hpp"

using namespace relcp;
using relcp::testing::attr;
using relcp::testing::make_row;

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

// One table exercising every encoder family.
Database mixed_db() {
    DatabaseSchema s;
    TableSchema t;
    t.name = "things";
    t.attributes = {attr("id", SemanticType::PrimaryKey),
                    attr("x", SemanticType::Numerical, true),
                    attr("color", SemanticType::Categorical, true),
                    attr("tags", SemanticType::MultiCategorical, true),
                    attr("note", SemanticType::Text, true),
                    attr("at", SemanticType::Timestamp, true)};
    t.time_attribute = "at";
    s.tables = {t};

    Database db;
    db.schema = s;
    db.tables.resize(1);
    auto& rows = db.tables[0];
    rows.push_back(make_row({Value::key("a"), Value::number(1.0), Value::category("red"),
                             Value::multi_category({"big", "new"}), Value::text("Fast car"),
                             Value::time(0)}));
    rows.push_back(make_row({Value::key("b"), Value::number(3.0), Value::category("blue"),
                             Value::multi_category({"new"}), Value::text("slow CAR"),
                             Value::time(86400)}));
    rows.push_back(make_row({Value::key("c"), Value::number(5.0), Value::category("red"),
                             Value::null(), Value::null(), Value::null()}));
    return db;
}

double frob(const Tensor& t) {
    double acc = 0.0;
    for (const double v : t.data) acc += v * v;
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("tokenize_text lowercases and splits on non-alphanumerics") {
    CHECK(tokenize_text("Fast car") == std::vector<std::string>{"fast", "car"});
    CHECK(tokenize_text("a-b_c 12x") == std::vector<std::string>{"a", "b", "c", "12x"});
    CHECK(tokenize_text("  ") == std::vector<std::string>{});
    CHECK(tokenize_text("") == std::vector<std::string>{});
}

TEST_CASE("timestamp features encode cycle position and z score") {
    // epoch 0 is a Thursday and zero days into its year
    const auto f = timestamp_features(0, 10.0, 2.0);
    CHECK(f[0] == doctest::Approx(std::sin(kTau * 4.0 / 7.0)).epsilon(1e-12));
    CHECK(f[1] == doctest::Approx(std::cos(kTau * 4.0 / 7.0)).epsilon(1e-12));
    CHECK(f[2] == 0.0);
    CHECK(f[3] == 1.0);
    CHECK(f[4] == doctest::Approx((0.0 - 10.0) / 2.0));

    // 40 days in: March 1 minus one day in a non-leap year
    const auto fd = timestamp_features(40 * 86400, 0.0, 1.0);
    CHECK(fd[2] == doctest::Approx(std::sin(kTau * 40.0 / 365.25)).epsilon(1e-12));
    CHECK(fd[3] == doctest::Approx(std::cos(kTau * 40.0 / 365.25)).epsilon(1e-12));

    // one day later lands on a Friday
    const auto g = timestamp_features(86400, 0.0, 1.0);
    CHECK(g[0] == doctest::Approx(std::sin(kTau * 5.0 / 7.0)).epsilon(1e-12));

    // negative epochs stay in range
    const auto h = timestamp_features(-1, 0.0, 1.0);  // 1969-12-31, Wednesday
    CHECK(h[0] == doctest::Approx(std::sin(kTau * 3.0 / 7.0)).epsilon(1e-12));
}

TEST_CASE("fit collects population stats and first-occurrence vocab") {
    const Database db = mixed_db();
    AttributeEncoders enc;
    enc.fit(db);
    REQUIRE(enc.fitted());

    const AttributeStats& xs = enc.stats("things", "x");
    CHECK(xs.mean == doctest::Approx(3.0));
    CHECK(xs.stdev == doctest::Approx(std::sqrt(8.0 / 3.0)));  // population, not sample

    const AttributeStats& cs = enc.stats("things", "color");
    CHECK(cs.vocab == std::vector<std::string>{"red", "blue"});

    // multicat vocab in first-occurrence order of tokens ("big" sorts first in row 1)
    const AttributeStats& ts = enc.stats("things", "tags");
    CHECK(ts.vocab == std::vector<std::string>{"big", "new"});

    CHECK_THROWS_AS(enc.stats("things", "missing"), UnknownColumn);
    CHECK_THROWS_AS(enc.stats("nope", "x"), UnknownColumn);
}

TEST_CASE("encode_table is unavailable before fit") {
    const Database db = mixed_db();
    AttributeEncoders enc;
    ParamStore store;
    Tape t;
    std::vector<const Row*> rows{&db.tables[0][0]};
    CHECK_THROWS_AS(enc.encode_table(t, rows, db.schema.tables[0], store), UnfittedEncoder);
    CHECK_THROWS_AS(enc.build_params(db.schema, store, 0), UnfittedEncoder);
}

TEST_CASE("encode_table shapes and determinism") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{8, 64});
    enc.fit(db);
    CHECK(enc.feature_width(db.schema.tables[0]) == 5 * 8);

    ParamStore store;
    enc.build_params(db.schema, store, 123);
    std::vector<const Row*> rows;
    for (const Row& r : db.tables[0]) rows.push_back(&r);

    Tape t1;
    const Var a = enc.encode_table(t1, rows, db.schema.tables[0], store);
    CHECK(t1.value(a).rows == 3);
    CHECK(t1.value(a).cols == 40);

    Tape t2;
    const Var b = enc.encode_table(t2, rows, db.schema.tables[0], store);
    CHECK(t1.value(a).data == t2.value(b).data);

    // a different init seed changes the embedding output
    ParamStore store2;
    enc.build_params(db.schema, store2, 124);
    Tape t3;
    const Var c = enc.encode_table(t3, rows, db.schema.tables[0], store2);
    CHECK(t1.value(a).data != t3.value(c).data);
}

TEST_CASE("parameter initialization ignores creation order") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{4, 16});
    enc.fit(db);

    ParamStore forward;
    enc.build_params(db.schema, forward, 9);

    // create one parameter early with a dummy init, then let build_params
    // fill the rest; names must still get identical values
    ParamStore scrambled;
    Rng r(555);
    scrambled.get_or_create("enc.things.note.emb", 16, 4,
                            [&] { return glorot_uniform(16, 4, r); });
    enc.build_params(db.schema, scrambled, 9);
    for (const auto& p : forward.all()) {
        if (p->name == "enc.things.note.emb") continue;  // pre-created above
        const Parameter* q = scrambled.find(p->name);
        REQUIRE(q != nullptr);
        CHECK(p->tensor.data == q->tensor.data);
    }
}

TEST_CASE("numeric encoding is the z score times a learned projection") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{6, 32});
    enc.fit(db);
    ParamStore store;
    enc.build_params(db.schema, store, 40);

    std::vector<const Row*> rows{&db.tables[0][0], &db.tables[0][2]};
    Tape t;
    const Var out = enc.encode_table(t, rows, db.schema.tables[0], store);
    const Tensor& proj = store.at("enc.things.x.proj").tensor;
    const AttributeStats& xs = enc.stats("things", "x");
    const double z0 = (1.0 - xs.mean) / xs.stdev;
    for (int j = 0; j < 6; ++j)
        CHECK(t.value(out).at(0, j) == doctest::Approx(z0 * proj.at(0, j)).epsilon(1e-12));
}

TEST_CASE("null cells use the learned replacement vector") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{6, 32});
    enc.fit(db);
    ParamStore store;
    enc.build_params(db.schema, store, 41);

    // nudge the null vector away from zero so substitution is visible
    Parameter& nv = store.at("enc.things.tags.null");
    for (double& v : nv.tensor.data) v = 0.5;

    std::vector<const Row*> rows{&db.tables[0][2]};  // tags is null here
    Tape t;
    const Var out = enc.encode_table(t, rows, db.schema.tables[0], store);
    // tags block is the third (x, color, tags, note, at)
    for (int j = 0; j < 6; ++j) CHECK(t.value(out).at(0, 12 + j) == 0.5);
}

TEST_CASE("unseen categories map to the shared OOV slot") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{5, 32});
    enc.fit(db);
    ParamStore store;
    enc.build_params(db.schema, store, 42);

    Row oov = db.tables[0][0];
    oov.values[2] = Value::category("chartreuse");
    Row oov2 = db.tables[0][0];
    oov2.values[2] = Value::category("vermilion");

    Tape t;
    std::vector<const Row*> rows{&oov, &oov2};
    const Var out = enc.encode_table(t, rows, db.schema.tables[0], store);
    for (int j = 0; j < 5; ++j)
        CHECK(t.value(out).at(0, 5 + j) == t.value(out).at(1, 5 + j));

    // the color embedding table has |vocab| + 1 rows
    CHECK(store.at("enc.things.color.emb").tensor.rows == 3);
}

TEST_CASE("multicat is a token sum and text a token mean") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{4, 32});
    enc.fit(db);
    ParamStore store;
    enc.build_params(db.schema, store, 43);

    std::vector<const Row*> rows{&db.tables[0][0], &db.tables[0][1]};
    Tape t;
    const Var out = enc.encode_table(t, rows, db.schema.tables[0], store);
    const Tensor& emb = store.at("enc.things.tags.emb").tensor;

    // row 0 tags {big,new} = vocab ids 0 and 1 summed; row 1 {new} alone
    for (int j = 0; j < 4; ++j) {
        CHECK(t.value(out).at(0, 8 + j) ==
              doctest::Approx(emb.at(0, j) + emb.at(1, j)).epsilon(1e-12));
        CHECK(t.value(out).at(1, 8 + j) == doctest::Approx(emb.at(1, j)).epsilon(1e-12));
    }

    // "Fast car" and "slow CAR" share the bucket for "car"
    const Tensor& txt = store.at("enc.things.note.emb").tensor;
    const uint64_t bucket_car = fnv1a("car", 3) % 32;
    const uint64_t bucket_fast = fnv1a("fast", 4) % 32;
    for (int j = 0; j < 4; ++j)
        CHECK(t.value(out).at(0, 12 + j) ==
              doctest::Approx((txt.at(static_cast<int>(bucket_fast), j) +
                               txt.at(static_cast<int>(bucket_car), j)) /
                              2.0)
                  .epsilon(1e-12));
}

TEST_CASE("serialization round trip reproduces encodings") {
    const Database db = mixed_db();
    AttributeEncoders enc(EncoderConfig{7, 128});
    enc.fit(db);

    const AttributeEncoders back = AttributeEncoders::from_json(enc.to_json());
    REQUIRE(back.fitted());
    CHECK(back.config().attr_dim == 7);
    CHECK(back.config().text_buckets == 128);

    ParamStore s1, s2;
    enc.build_params(db.schema, s1, 77);
    back.build_params(db.schema, s2, 77);
    std::vector<const Row*> rows;
    for (const Row& r : db.tables[0]) rows.push_back(&r);
    Tape t1, t2;
    const Var a = enc.encode_table(t1, rows, db.schema.tables[0], s1);
    const Var b = back.encode_table(t2, rows, db.schema.tables[0], s2);
    CHECK(t1.value(a).data == t2.value(b).data);
    CHECK(frob(t1.value(a)) > 0.0);
}

TEST_CASE("malformed encoder json is rejected") {
    CHECK_THROWS_AS(AttributeEncoders::from_json(nlohmann::json{{"bogus", 1}}),
                    CorruptPayload);
}

TEST_CASE("constant columns fall back to unit spread") {
    DatabaseSchema s;
    TableSchema t;
    t.name = "flat";
    t.attributes = {attr("id", SemanticType::PrimaryKey),
                    attr("k", SemanticType::Numerical)};
    s.tables = {t};
    Database db;
    db.schema = s;
    db.tables.resize(1);
    for (int i = 0; i < 4; ++i)
        db.tables[0].push_back(
            make_row({Value::key("r" + std::to_string(i)), Value::number(7.5)}));

    AttributeEncoders enc;
    enc.fit(db);
    CHECK(enc.stats("flat", "k").mean == doctest::Approx(7.5));
    CHECK(enc.stats("flat", "k").stdev == 1.0);  // degenerate spread guard
}
