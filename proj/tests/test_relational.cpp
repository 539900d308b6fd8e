#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "relcp/csv.hpp"
#include "relcp/database.hpp"
#include "relcp/errors.hpp"
#include "relcp/rng.hpp"
#include "relcp/schema.hpp"

using namespace relcp;
using namespace relcp::testing;

TEST_SUITE("rng") {
    TEST_CASE("same seed, same stream") {
        Rng a(42), b(42);
        for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    }

    TEST_CASE("derived seeds differ per salt") {
        std::set<uint64_t> seen;
        for (uint64_t salt = 0; salt < 64; ++salt) seen.insert(derive_seed(7, salt));
        CHECK(seen.size() == 64);
    }

    TEST_CASE("bounded stays in range") {
        Rng r(1);
        for (int i = 0; i < 2000; ++i) CHECK(r.bounded(7) < 7);
        CHECK(r.bounded(1) == 0);
    }

    TEST_CASE("uniform stays in [0,1)") {
        Rng r(3);
        for (int i = 0; i < 2000; ++i) {
            const double u = r.uniform();
            CHECK(u >= 0.0);
            CHECK(u < 1.0);
        }
    }

    TEST_CASE("sample without replacement is a distinct subset") {
        Rng r(5);
        const auto s = r.sample_without_replacement(20, 8);
        CHECK(s.size() == 8);
        std::set<int> dedup(s.begin(), s.end());
        CHECK(dedup.size() == 8);
        for (int x : s) CHECK((x >= 0 && x < 20));
        CHECK(r.sample_without_replacement(3, 10).size() == 3);
    }

    TEST_CASE("state round-trips") {
        Rng a(9);
        for (int i = 0; i < 17; ++i) a.next_u64();
        const std::string s = a.state();
        Rng b;
        b.restore(s);
        for (int i = 0; i < 50; ++i) CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_SUITE("value") {
    TEST_CASE("multi-category is sorted and deduplicated") {
        const Value v = Value::multi_category({"b", "a", "b", "c"});
        CHECK(v.as_multi_category() == std::vector<std::string>{"a", "b", "c"});
        CHECK(v == Value::multi_category({"c", "a", "b"}));
    }

    TEST_CASE("number equality is bitwise") {
        CHECK(Value::number(1.5) == Value::number(1.5));
        CHECK(Value::number(0.0) != Value::number(-0.0));
    }

    TEST_CASE("wrong accessor throws") {
        CHECK_THROWS_AS(Value::number(1.0).as_category(), TypeMismatch);
        CHECK_THROWS_AS(Value::null().as_number(), TypeMismatch);
    }

    TEST_CASE("empty key rejected") { CHECK_THROWS_AS(Value::key(""), ParseError); }

    TEST_CASE("null matches every column type") {
        CHECK(Value::null().matches(SemanticType::Numerical));
        CHECK(Value::number(2.0).matches(SemanticType::Numerical));
        CHECK_FALSE(Value::number(2.0).matches(SemanticType::Categorical));
    }

    TEST_CASE("semantic type names round-trip") {
        for (auto t : {SemanticType::Numerical, SemanticType::Categorical,
                       SemanticType::MultiCategorical, SemanticType::Text,
                       SemanticType::Timestamp, SemanticType::PrimaryKey,
                       SemanticType::ForeignKey})
            CHECK(semantic_type_from_name(semantic_type_name(t)) == t);
        CHECK_THROWS_AS(semantic_type_from_name("float"), ParseError);
    }
}

TEST_SUITE("csv") {
    TEST_CASE("quoted fields round-trip") {
        TempDir dir;
        const std::string path = (dir.path / "t.csv").string();
        const std::vector<std::vector<std::string>> records = {
            {"a", "b,c", "line\nbreak"},
            {"\"quoted\"", "", "plain"},
        };
        write_csv(path, records);
        CHECK(read_csv(path) == records);
    }

    TEST_CASE("crlf and lf both accepted") {
        TempDir dir;
        const std::string path = (dir.path / "t.csv").string();
        write_file(path, "a,b\r\n1,2\n3,4");
        const auto records = read_csv(path);
        REQUIRE(records.size() == 3);
        CHECK(records[1] == std::vector<std::string>{"1", "2"});
        CHECK(records[2] == std::vector<std::string>{"3", "4"});
    }

    TEST_CASE("unterminated quote rejected") {
        TempDir dir;
        const std::string path = (dir.path / "t.csv").string();
        write_file(path, "a,\"open\n");
        CHECK_THROWS_AS(read_csv(path), ParseError);
    }

    TEST_CASE("missing file rejected") {
        CHECK_THROWS_AS(read_csv("/nonexistent/nope.csv"), IoError);
    }
}

TEST_SUITE("schema") {
    static const char* kGoodSchema = R"({
      "tables": [
        {"name": "users",
         "attributes": [
           {"name": "user_id", "stype": "primary_key"},
           {"name": "age", "stype": "numerical", "nullable": true},
           {"name": "joined", "stype": "timestamp"}],
         "primary_key": "user_id",
         "time_attribute": "joined"},
        {"name": "events",
         "attributes": [
           {"name": "event_id", "stype": "primary_key"},
           {"name": "user_id", "stype": "foreign_key"},
           {"name": "kind", "stype": "categorical"}],
         "primary_key": "event_id",
         "foreign_keys": [{"column": "user_id", "target_table": "users"}]}
      ]})";

    TEST_CASE("valid schema parses") {
        const DatabaseSchema s = parse_schema_json(kGoodSchema, "inline");
        REQUIRE(s.tables.size() == 2);
        CHECK(s.table("users").primary_key_index() == 0);
        CHECK(s.table("users").time_attribute == std::string("joined"));
        CHECK(s.table("events").attribute("user_id").fk_target == "users");
        CHECK(s.table("events").foreign_key_indices() == std::vector<int>{1});
        CHECK(s.table("users").value_attribute_indices() == std::vector<int>{1, 2});
    }

    TEST_CASE("serialization round-trips") {
        const DatabaseSchema s = parse_schema_json(kGoodSchema, "inline");
        const DatabaseSchema s2 = parse_schema_json(schema_to_json(s), "reparsed");
        REQUIRE(s2.tables.size() == s.tables.size());
        for (size_t i = 0; i < s.tables.size(); ++i) {
            CHECK(s2.tables[i].name == s.tables[i].name);
            CHECK(s2.tables[i].time_attribute == s.tables[i].time_attribute);
            REQUIRE(s2.tables[i].attributes.size() == s.tables[i].attributes.size());
            for (size_t j = 0; j < s.tables[i].attributes.size(); ++j) {
                CHECK(s2.tables[i].attributes[j].name == s.tables[i].attributes[j].name);
                CHECK(s2.tables[i].attributes[j].stype == s.tables[i].attributes[j].stype);
                CHECK(s2.tables[i].attributes[j].nullable == s.tables[i].attributes[j].nullable);
                CHECK(s2.tables[i].attributes[j].fk_target == s.tables[i].attributes[j].fk_target);
            }
        }
    }

    TEST_CASE("structural violations rejected") {
        auto broken = [](const std::string& body) {
            return std::string(R"({"tables": [)") + body + "]}";
        };
        const std::string users =
            R"({"name": "users", "attributes": [{"name": "id", "stype": "primary_key"}], "primary_key": "id"})";
        // duplicate table name
        CHECK_THROWS_AS(parse_schema_json(broken(users + "," + users), "x"), SchemaError);
        // no primary key tag
        CHECK_THROWS_AS(
            parse_schema_json(
                broken(
                    R"({"name": "t", "attributes": [{"name": "id", "stype": "categorical"}], "primary_key": "id"})"),
                "x"),
            SchemaError);
        // two primary keys
        CHECK_THROWS_AS(
            parse_schema_json(
                broken(
                    R"({"name": "t", "attributes": [{"name": "a", "stype": "primary_key"}, {"name": "b", "stype": "primary_key"}], "primary_key": "a"})"),
                "x"),
            SchemaError);
        // duplicate attribute
        CHECK_THROWS_AS(
            parse_schema_json(
                broken(
                    R"({"name": "t", "attributes": [{"name": "id", "stype": "primary_key"}, {"name": "id", "stype": "numerical"}], "primary_key": "id"})"),
                "x"),
            SchemaError);
        // foreign key target does not exist
        CHECK_THROWS_AS(
            parse_schema_json(
                broken(
                    R"({"name": "t", "attributes": [{"name": "id", "stype": "primary_key"}, {"name": "fk", "stype": "foreign_key"}], "primary_key": "id", "foreign_keys": [{"column": "fk", "target_table": "ghost"}]})"),
                "x"),
            SchemaError);
        // foreign key attribute without a foreign_keys entry
        CHECK_THROWS_AS(
            parse_schema_json(
                broken(
                    R"({"name": "t", "attributes": [{"name": "id", "stype": "primary_key"}, {"name": "fk", "stype": "foreign_key"}], "primary_key": "id"})"),
                "x"),
            SchemaError);
        // time attribute of the wrong type
        CHECK_THROWS_AS(
            parse_schema_json(
                broken(
                    R"({"name": "t", "attributes": [{"name": "id", "stype": "primary_key"}, {"name": "x", "stype": "numerical"}], "primary_key": "id", "time_attribute": "x"})"),
                "x"),
            SchemaError);
        // malformed json
        CHECK_THROWS_AS(parse_schema_json("{", "x"), ParseError);
    }
}

TEST_SUITE("cells") {
    TEST_CASE("numbers") {
        const Attribute a = attr("x", SemanticType::Numerical);
        CHECK(parse_cell("1.5", a, "here").as_number() == 1.5);
        CHECK(parse_cell("-2e3", a, "here").as_number() == -2000.0);
        CHECK_THROWS_AS(parse_cell("abc", a, "here"), ParseError);
        CHECK_THROWS_AS(parse_cell("1.5x", a, "here"), ParseError);
        CHECK_THROWS_AS(parse_cell("inf", a, "here"), ParseError);
    }

    TEST_CASE("empty cell handling") {
        CHECK(parse_cell("", attr("x", SemanticType::Numerical, true), "here").is_null());
        CHECK_THROWS_AS(parse_cell("", attr("x", SemanticType::Numerical, false), "here"),
                        ParseError);
        CHECK_THROWS_AS(parse_cell("", attr("x", SemanticType::PrimaryKey), "here"), ParseError);
    }

    TEST_CASE("multi-category splits on semicolons") {
        const Attribute a = attr("tags", SemanticType::MultiCategorical);
        CHECK(parse_cell("b;a;b", a, "here").as_multi_category() ==
              std::vector<std::string>{"a", "b"});
        CHECK(parse_cell(";a;", a, "here").as_multi_category() == std::vector<std::string>{"a"});
    }

    TEST_CASE("timestamps accept iso-8601 and epoch seconds") {
        CHECK(parse_timestamp("2021-03-04T10:22:00", "here") == 1614853320);
        CHECK(parse_timestamp("2021-03-04", "here") == 1614816000);
        CHECK(parse_timestamp("2021-03-04T10:22:00Z", "here") == 1614853320);
        CHECK(parse_timestamp("1614853320", "here") == 1614853320);
        CHECK(parse_timestamp("-86400", "here") == -86400);
        CHECK_THROWS_AS(parse_timestamp("2021-02-30", "here"), ParseError);
        CHECK_THROWS_AS(parse_timestamp("2021-13-01", "here"), ParseError);
        CHECK_THROWS_AS(parse_timestamp("2021-03-04T25:00:00", "here"), ParseError);
        CHECK_THROWS_AS(parse_timestamp("2021/03/04", "here"), ParseError);
        CHECK_THROWS_AS(parse_timestamp("yesterday", "here"), ParseError);
    }

    TEST_CASE("formatting inverts parsing") {
        const Attribute ts = attr("t", SemanticType::Timestamp);
        CHECK(format_cell(parse_cell("2021-03-04T10:22:00", ts, "x")) == "2021-03-04T10:22:00");
        CHECK(format_cell(Value::null()).empty());
        CHECK(format_cell(Value::multi_category({"b", "a"})) == "a;b");

        // doubles survive a text round-trip bit for bit
        Rng rng(123);
        const Attribute num = attr("x", SemanticType::Numerical);
        for (int i = 0; i < 500; ++i) {
            const double x = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-20.0, 20.0));
            const Value back = parse_cell(format_cell(Value::number(x)), num, "x");
            CHECK(back == Value::number(x));
        }
        CHECK(format_cell(Value::number(0.1)) == "0.1");
    }
}

namespace {

DatabaseSchema timed_schema() {
    DatabaseSchema s;
    TableSchema users;
    users.name = "users";
    users.attributes = {attr("uid", SemanticType::PrimaryKey),
                        attr("name", SemanticType::Categorical)};
    TableSchema sessions;
    sessions.name = "sessions";
    sessions.attributes = {attr("sid", SemanticType::PrimaryKey),
                           attr("uid", SemanticType::ForeignKey, false, "users"),
                           attr("at", SemanticType::Timestamp, true)};
    sessions.time_attribute = "at";
    TableSchema clicks;
    clicks.name = "clicks";
    clicks.attributes = {attr("kid", SemanticType::PrimaryKey),
                         attr("sid", SemanticType::ForeignKey, false, "sessions")};
    s.tables = {users, sessions, clicks};
    return s;
}

Database timed_db() {
    Database db;
    db.schema = timed_schema();
    db.tables.resize(3);
    db.tables[0] = {make_row({Value::key("u1"), Value::category("ann")}),
                    make_row({Value::key("u2"), Value::category("bo")})};
    db.tables[1] = {
        make_row({Value::key("s1"), Value::key("u1"), Value::time(100)}),
        make_row({Value::key("s2"), Value::key("u1"), Value::time(200)}),
        make_row({Value::key("s3"), Value::key("u2"), Value::time(300)}),
        make_row({Value::key("s4"), Value::key("u2"), Value::null()}),
    };
    db.tables[2] = {
        make_row({Value::key("k1"), Value::key("s1")}),
        make_row({Value::key("k2"), Value::key("s3")}),
        make_row({Value::key("k3"), Value::key("s4")}),
    };
    return db;
}

std::multiset<std::string> pk_multiset(const Database& db) {
    std::multiset<std::string> keys;
    for (size_t t = 0; t < db.tables.size(); ++t) {
        const int pk = db.schema.tables[t].primary_key_index();
        for (const auto& row : db.tables[t])
            keys.insert(db.schema.tables[t].name + "/" +
                        row.values[static_cast<size_t>(pk)].as_key());
    }
    return keys;
}

}  // namespace

TEST_SUITE("database") {
    TEST_CASE("csv round-trip preserves every value") {
        TempDir dir;
        const Database db = timed_db();
        write_database_csv(db, dir.str());
        const Database back = load_database(db.schema, dir.str());
        CHECK(same_rows(db, back));
    }

    TEST_CASE("duplicate primary keys rejected at load") {
        TempDir dir;
        Database db = timed_db();
        db.tables[0].push_back(make_row({Value::key("u1"), Value::category("dup")}));
        write_database_csv(db, dir.str());
        CHECK_THROWS_AS(load_database(db.schema, dir.str()), IntegrityError);
        const auto report = validate_integrity(db);
        REQUIRE(report.duplicate_pks.size() == 1);
        CHECK(report.duplicate_pks[0].table == "users");
        CHECK(report.duplicate_pks[0].pk_value == "u1");
        CHECK(report.duplicate_pks[0].first_row == 0);
        CHECK(report.duplicate_pks[0].second_row == 2);
    }

    TEST_CASE("dangling foreign keys rejected at load") {
        TempDir dir;
        Database db = timed_db();
        db.tables[2].push_back(make_row({Value::key("k9"), Value::key("s999")}));
        write_database_csv(db, dir.str());
        CHECK_THROWS_AS(load_database(db.schema, dir.str()), IntegrityError);
        const auto report = validate_integrity(db);
        REQUIRE(report.dangling_fks.size() == 1);
        CHECK(report.dangling_fks[0].table == "clicks");
        CHECK(report.dangling_fks[0].column == "sid");
        CHECK(report.dangling_fks[0].row == 3);
        CHECK(report.dangling_fks[0].value == "s999");
        CHECK_FALSE(report.clean());
        CHECK(report.describe().find("s999") != std::string::npos);
    }

    TEST_CASE("null foreign key is fine") {
        DatabaseSchema s = parent_child_schema();
        Database db;
        db.schema = s;
        db.tables.resize(2);
        db.tables[0] = {make_row({Value::key("p1"), Value::number(1.0)})};
        db.tables[1] = {make_row({Value::key("c1"), Value::null(), Value::number(2.0)})};
        CHECK(validate_integrity(db).clean());
    }

    TEST_CASE("malformed cells name their location") {
        TempDir dir;
        write_file(dir.path / "parent.csv", "pid,score\np1,notanumber\n");
        write_file(dir.path / "child.csv", "cid,pid,amount\n");
        try {
            load_database(parent_child_schema(), dir.str());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("parent.csv") != std::string::npos);
            CHECK(msg.find("score") != std::string::npos);
        }
    }

    TEST_CASE("header must match schema") {
        TempDir dir;
        write_file(dir.path / "parent.csv", "pid,score,extra\np1,1,2\n");
        write_file(dir.path / "child.csv", "cid,pid,amount\n");
        CHECK_THROWS_AS(load_database(parent_child_schema(), dir.str()), UnknownColumn);

        write_file(dir.path / "parent.csv", "pid\np1\n");
        CHECK_THROWS_AS(load_database(parent_child_schema(), dir.str()), ParseError);

        // reordered columns are accepted
        write_file(dir.path / "parent.csv", "score,pid\n1.5,p1\n");
        const Database db = load_database(parent_child_schema(), dir.str());
        CHECK(db.rows("parent")[0].values[0].as_key() == "p1");
        CHECK(db.rows("parent")[0].values[1].as_number() == 1.5);
    }

    TEST_CASE("ragged rows rejected") {
        TempDir dir;
        write_file(dir.path / "parent.csv", "pid,score\np1,1,9\n");
        write_file(dir.path / "child.csv", "cid,pid,amount\n");
        CHECK_THROWS_AS(load_database(parent_child_schema(), dir.str()), ParseError);
    }
}

TEST_SUITE("marginal") {
    TEST_CASE("dedup drops nulls, keeps first-occurrence order") {
        DatabaseSchema s;
        TableSchema t;
        t.name = "t";
        t.attributes = {attr("id", SemanticType::PrimaryKey),
                        attr("c", SemanticType::Categorical, true)};
        s.tables = {t};
        Database db;
        db.schema = s;
        db.tables.resize(1);
        const char* vals[] = {"A", "B", "A", nullptr, "C"};
        for (int i = 0; i < 5; ++i)
            db.tables[0].push_back(
                make_row({Value::key("r" + std::to_string(i)),
                          vals[i] ? Value::category(vals[i]) : Value::null()}));
        const auto m = column_marginal(db, "t", "c");
        REQUIRE(m.observed_values.size() == 3);
        CHECK(m.observed_values[0].as_category() == "A");
        CHECK(m.observed_values[1].as_category() == "B");
        CHECK(m.observed_values[2].as_category() == "C");
    }

    TEST_CASE("all-null column yields empty marginal") {
        DatabaseSchema s;
        TableSchema t;
        t.name = "t";
        t.attributes = {attr("id", SemanticType::PrimaryKey),
                        attr("c", SemanticType::Numerical, true)};
        s.tables = {t};
        Database db;
        db.schema = s;
        db.tables.resize(1);
        db.tables[0] = {make_row({Value::key("r0"), Value::null()}),
                        make_row({Value::key("r1"), Value::null()})};
        CHECK(column_marginal(db, "t", "c").observed_values.empty());
    }

    TEST_CASE("key columns and unknown columns rejected") {
        const Database db = timed_db();
        CHECK_THROWS_AS(column_marginal(db, "sessions", "sid"), KeyColumnNotAllowed);
        CHECK_THROWS_AS(column_marginal(db, "sessions", "uid"), KeyColumnNotAllowed);
        CHECK_THROWS_AS(column_marginal(db, "sessions", "ghost"), UnknownColumn);
        CHECK_THROWS_AS(column_marginal(db, "ghost", "sid"), UnknownColumn);
    }
}

TEST_SUITE("temporal_prune") {
    TEST_CASE("cutoff at or past max is a no-op") {
        const Database db = timed_db();
        CHECK(same_rows(temporal_prune(db, 300), db));
        CHECK(same_rows(temporal_prune(db, 1000), db));
    }

    TEST_CASE("cutoff below min empties timestamped tables and cascades") {
        const Database db = timed_db();
        const Database pruned = temporal_prune(db, 50);
        CHECK(pruned.rows("users").size() == 2);     // no time attribute, untouched
        CHECK(pruned.rows("sessions").size() == 1);  // only the null-time row survives
        CHECK(pruned.rows("sessions")[0].values[0].as_key() == "s4");
        CHECK(pruned.rows("clicks").size() == 1);  // k3 -> s4 survives the cascade
        CHECK(pruned.rows("clicks")[0].values[0].as_key() == "k3");
    }

    TEST_CASE("mid cutoff prunes rows and dependents consistently") {
        const Database db = timed_db();
        const Database pruned = temporal_prune(db, 250);
        CHECK(pruned.rows("sessions").size() == 3);  // s1, s2, s4 (s3 at 300 dropped)
        CHECK(pruned.rows("clicks").size() == 2);    // k2 -> s3 cascaded away
        CHECK(validate_integrity(pruned).clean());
    }

    TEST_CASE("idempotent and monotone") {
        const Database db = timed_db();
        for (int64_t c : {50, 150, 250, 350}) {
            const Database once = temporal_prune(db, c);
            CHECK(same_rows(temporal_prune(once, c), once));
        }
        std::multiset<std::string> prev;
        bool first = true;
        for (int64_t c : {0, 100, 200, 300}) {
            const auto keys = pk_multiset(temporal_prune(db, c));
            if (!first)
                CHECK(std::includes(keys.begin(), keys.end(), prev.begin(), prev.end()));
            prev = keys;
            first = false;
        }
    }
}
