#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <memory>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "relcp/errors.hpp"
#include "relcp/graph.hpp"
#include "relcp/rng.hpp"
#include "relcp/sampler.hpp"

using namespace relcp;
using namespace relcp::testing;

namespace {

// Closure check by brute force: the subgraph's edges must be exactly the
// parent edges restricted to included nodes.
void check_closure(const Subgraph& sub, const HeteroGraph& g) {
    for (size_t et = 0; et < g.edge_types.size(); ++et) {
        const int st = g.edge_types[et].source_type;
        const int tt = g.edge_types[et].target_type;
        std::multiset<std::pair<int, int>> expected;
        for (const auto& [s, t] : g.edges[et]) {
            const int ls = sub.local_of({st, s});
            const int lt = sub.local_of({tt, t});
            if (ls >= 0 && lt >= 0) expected.insert({ls, lt});
        }
        std::multiset<std::pair<int, int>> actual(sub.local_edges[et].begin(),
                                                  sub.local_edges[et].end());
        CHECK(expected == actual);
    }
}

// Unbounded breadth-first expansion, for contrast with the balanced sampler.
std::vector<int> naive_bfs_counts(const HeteroGraph& g, const std::vector<NodeId>& seeds,
                                  int depth) {
    std::vector<std::set<int>> included(g.node_counts.size());
    std::vector<NodeId> frontier;
    for (const NodeId s : seeds)
        if (included[static_cast<size_t>(s.type)].insert(s.index).second) frontier.push_back(s);
    for (int hop = 0; hop < depth; ++hop) {
        std::vector<NodeId> next;
        for (const NodeId v : frontier) {
            for (size_t et = 0; et < g.edge_types.size(); ++et) {
                if (g.edge_types[et].target_type != v.type) continue;
                const int st = g.edge_types[et].source_type;
                for (int u : g.in_neighbors(static_cast<int>(et), v))
                    if (included[static_cast<size_t>(st)].insert(u).second)
                        next.push_back({st, u});
            }
        }
        frontier = std::move(next);
    }
    std::vector<int> counts;
    for (const auto& s : included) counts.push_back(static_cast<int>(s.size()));
    return counts;
}

std::shared_ptr<const Database> dense_ptr() {
    static auto db = std::make_shared<Database>(dense_db());
    return db;
}

}  // namespace

TEST_SUITE("pick_seed_type") {
    TEST_CASE("most foreign keys wins, ties go to schema order") {
        DatabaseSchema s;
        auto table = [](const std::string& name, int fks,
                        const std::string& target) {
            TableSchema t;
            t.name = name;
            t.attributes = {attr("id", SemanticType::PrimaryKey)};
            for (int i = 0; i < fks; ++i)
                t.attributes.push_back(
                    attr("fk" + std::to_string(i), SemanticType::ForeignKey, true, target));
            return t;
        };
        s.tables = {table("drivers", 0, ""), table("races", 1, "drivers"),
                    table("results", 3, "drivers"), table("standings", 2, "drivers")};
        CHECK(pick_seed_type(s) == "results");

        DatabaseSchema tie;
        tie.tables = {table("anchor", 0, ""), table("first", 2, "anchor"),
                      table("second", 2, "anchor")};
        CHECK(pick_seed_type(tie) == "first");
    }
}

TEST_SUITE("hg_sample") {
    TEST_CASE("deterministic given the seed") {
        const auto g = build_graph(dense_ptr());
        HgSamplerConfig cfg;
        cfg.seed_type = "events";
        cfg.rng_seed = 11;
        const Subgraph a = hg_sample(g, cfg);
        const Subgraph b = hg_sample(g, cfg);
        CHECK(a.nodes == b.nodes);
        CHECK(a.local_edges == b.local_edges);
        cfg.rng_seed = 12;
        const Subgraph c = hg_sample(g, cfg);
        CHECK(a.nodes != c.nodes);
    }

    TEST_CASE("per-type budgets hold") {
        const auto g = build_graph(dense_ptr());
        HgSamplerConfig cfg;
        cfg.seed_type = "events";
        cfg.seed_count = 200;
        cfg.per_type_budget = 64;
        cfg.iterations = 3;
        for (uint64_t seed = 0; seed < 5; ++seed) {
            cfg.rng_seed = seed;
            const Subgraph sub = hg_sample(g, cfg);
            CHECK(sub.node_count(g.node_type_index("events")) <= cfg.seed_count);
            for (const char* t : {"users", "items"}) {
                const int n = sub.node_count(g.node_type_index(t));
                CHECK(n >= cfg.per_type_budget);
                CHECK(n <= cfg.iterations * cfg.per_type_budget);
            }
        }
    }

    TEST_CASE("subgraph is the induced closure") {
        const auto g = build_graph(dense_ptr());
        HgSamplerConfig cfg;
        cfg.seed_type = "events";
        cfg.seed_count = 40;
        cfg.per_type_budget = 16;
        cfg.rng_seed = 3;
        check_closure(hg_sample(g, cfg), g);
    }

    TEST_CASE("star hub with one round takes exactly the referenced spokes") {
        Database db;
        db.schema = parent_child_schema();
        db.tables.resize(2);
        for (int i = 0; i < 5; ++i)
            db.tables[0].push_back(
                make_row({Value::key("p" + std::to_string(i)), Value::number(i)}));
        for (int i = 0; i < 10; ++i)
            db.tables[1].push_back(make_row({Value::key("c" + std::to_string(i)),
                                             Value::key("p" + std::to_string(i % 3)),
                                             Value::number(i)}));
        const auto g = build_graph(std::make_shared<Database>(db));
        HgSamplerConfig cfg;
        cfg.seed_type = "child";
        cfg.seed_count = 10;  // all children
        cfg.iterations = 1;
        cfg.per_type_budget = 64;
        const Subgraph sub = hg_sample(g, cfg);
        CHECK(sub.node_count(1) == 10);
        CHECK(sub.node_count(0) == 3);  // children only reference p0..p2
        check_closure(sub, g);
    }

    TEST_CASE("edgeless graph gives seeds only") {
        DatabaseSchema s;
        TableSchema t;
        t.name = "solo";
        t.attributes = {attr("id", SemanticType::PrimaryKey)};
        s.tables = {t};
        Database db;
        db.schema = s;
        db.tables.resize(1);
        for (int i = 0; i < 30; ++i)
            db.tables[0].push_back(make_row({Value::key("n" + std::to_string(i))}));
        const auto g = build_graph(std::make_shared<Database>(db));
        HgSamplerConfig cfg;
        cfg.seed_type = "solo";
        cfg.seed_count = 8;
        const Subgraph sub = hg_sample(g, cfg);
        CHECK(sub.node_count(0) == 8);
        CHECK(sub.total_edges() == 0);
        CHECK(sub.seeds.size() == 8);
    }

    TEST_CASE("seed count larger than the table takes everything") {
        Database db;
        db.schema = parent_child_schema();
        db.tables.resize(2);
        db.tables[0] = {make_row({Value::key("p0"), Value::number(0)})};
        db.tables[1] = {make_row({Value::key("c0"), Value::key("p0"), Value::number(0)})};
        const auto g = build_graph(std::make_shared<Database>(db));
        HgSamplerConfig cfg;
        cfg.seed_type = "child";
        cfg.seed_count = 99;
        const Subgraph sub = hg_sample(g, cfg);
        CHECK(sub.node_count(1) == 1);
        CHECK(sub.seeds.size() == 1);
    }

    TEST_CASE("errors") {
        DatabaseSchema s = parent_child_schema();
        Database db;
        db.schema = s;
        db.tables.resize(2);
        const auto g = build_graph(std::make_shared<Database>(db));
        HgSamplerConfig cfg;
        cfg.seed_type = "parent";
        CHECK_THROWS_AS(hg_sample(g, cfg), EmptyGraph);

        const auto gd = build_graph(dense_ptr());
        cfg.seed_type = "ghost";
        CHECK_THROWS_AS(hg_sample(gd, cfg), UnknownSeedType);
        cfg.seed_type = "events";
        cfg.per_type_budget = 0;
        CHECK_THROWS_AS(hg_sample(gd, cfg), ParseError);
    }

    TEST_CASE("balanced where naive bfs skews") {
        const auto g = build_graph(dense_ptr());
        HgSamplerConfig cfg;
        cfg.seed_type = "events";
        cfg.seed_count = 200;
        cfg.per_type_budget = 64;
        cfg.iterations = 3;
        cfg.rng_seed = 7;
        const Subgraph sub = hg_sample(g, cfg);
        int mx = 0, mn = 1 << 30;
        for (size_t t = 0; t < sub.nodes.size(); ++t) {
            mx = std::max(mx, sub.node_count(static_cast<int>(t)));
            mn = std::min(mn, sub.node_count(static_cast<int>(t)));
        }
        REQUIRE(mn > 0);
        CHECK(static_cast<double>(mx) / mn <= 3.0);

        std::vector<NodeId> seeds;
        const int ev = g.node_type_index("events");
        Rng rng(7);
        for (int s : rng.sample_without_replacement(g.node_counts[static_cast<size_t>(ev)], 200))
            seeds.push_back({ev, s});
        const auto counts = naive_bfs_counts(g, seeds, 2);
        const int bmx = *std::max_element(counts.begin(), counts.end());
        const int bmn = *std::min_element(counts.begin(), counts.end());
        REQUIRE(bmn > 0);
        CHECK(static_cast<double>(bmx) / bmn > 10.0);
    }
}

TEST_SUITE("neighbor_sample") {
    TEST_CASE("fanout above degree keeps everything") {
        const Database db = dense_db(5, 5, 20);
        const auto g = build_graph(std::make_shared<Database>(db));
        NeighborSamplerConfig cfg;
        cfg.fanout = 128;
        cfg.depth = 1;
        const int uid = g.node_type_index("users");
        const Subgraph sub = neighbor_sample(g, {{uid, 0}}, cfg);
        size_t expected = 0;
        for (size_t et = 0; et < g.edge_types.size(); ++et)
            if (g.edge_types[et].target_type == uid)
                expected += g.in_neighbors(static_cast<int>(et), {uid, 0}).size();
        CHECK(static_cast<size_t>(sub.total_nodes()) == expected + 1);
        check_closure(sub, g);
    }

    TEST_CASE("two hops reach the grandchild") {
        DatabaseSchema s;
        TableSchema a;
        a.name = "a";
        a.attributes = {attr("id", SemanticType::PrimaryKey)};
        TableSchema b;
        b.name = "b";
        b.attributes = {attr("id", SemanticType::PrimaryKey),
                        attr("a_id", SemanticType::ForeignKey, false, "a")};
        TableSchema c;
        c.name = "c";
        c.attributes = {attr("id", SemanticType::PrimaryKey),
                        attr("b_id", SemanticType::ForeignKey, false, "b")};
        s.tables = {a, b, c};
        Database db;
        db.schema = s;
        db.tables.resize(3);
        db.tables[0] = {make_row({Value::key("a0")})};
        db.tables[1] = {make_row({Value::key("b0"), Value::key("a0")})};
        db.tables[2] = {make_row({Value::key("c0"), Value::key("b0")})};
        const auto g = build_graph(std::make_shared<Database>(db));

        NeighborSamplerConfig cfg;
        cfg.depth = 1;
        CHECK(neighbor_sample(g, {{0, 0}}, cfg).node_count(2) == 0);
        cfg.depth = 2;
        const Subgraph sub = neighbor_sample(g, {{0, 0}}, cfg);
        CHECK(sub.node_count(2) == 1);
        check_closure(sub, g);
    }

    TEST_CASE("cutoff admits only old enough neighbors") {
        Database db;
        db.schema = parent_child_schema();
        db.schema.tables[1].attributes.push_back(attr("at", SemanticType::Timestamp));
        db.schema.tables[1].time_attribute = "at";
        db.tables.resize(2);
        db.tables[0] = {make_row({Value::key("p0"), Value::number(0)})};
        db.tables[1] = {
            make_row({Value::key("c0"), Value::key("p0"), Value::number(0), Value::time(99)}),
            make_row({Value::key("c1"), Value::key("p0"), Value::number(1), Value::time(101)})};
        const auto g = build_graph(std::make_shared<Database>(db));
        NeighborSamplerConfig cfg;
        cfg.depth = 1;
        cfg.time_cutoffs = std::vector<int64_t>{100};
        const Subgraph sub = neighbor_sample(g, {{0, 0}}, cfg);
        REQUIRE(sub.node_count(1) == 1);
        CHECK(sub.nodes[1][0] == 0);  // the t=99 child only
    }

    TEST_CASE("fanout caps each expansion") {
        const auto g = build_graph(dense_ptr());
        NeighborSamplerConfig cfg;
        cfg.fanout = 4;
        cfg.depth = 1;
        cfg.rng_seed = 5;
        const int uid = g.node_type_index("users");
        const Subgraph sub = neighbor_sample(g, {{uid, 3}}, cfg);
        // one user, at most 4 events drawn from its incoming edges
        CHECK(sub.node_count(g.node_type_index("events")) <= 4);
        const Subgraph again = neighbor_sample(g, {{uid, 3}}, cfg);
        CHECK(sub.nodes == again.nodes);
        check_closure(sub, g);
    }

    TEST_CASE("per-seed cutoffs bind to the introducing seed") {
        const auto g = build_graph(dense_ptr());
        const int uid = g.node_type_index("users");
        const int evt = g.node_type_index("events");
        NeighborSamplerConfig cfg;
        cfg.fanout = 64;
        cfg.depth = 2;
        cfg.rng_seed = 17;
        cfg.time_cutoffs = std::vector<int64_t>{4000, 22000};
        const Subgraph sub = neighbor_sample(g, {{uid, 1}, {uid, 2}}, cfg);
        for (size_t local = 0; local < sub.nodes[static_cast<size_t>(evt)].size(); ++local) {
            const int intro = sub.intro_seed[static_cast<size_t>(evt)][local];
            REQUIRE(intro >= 0);
            const auto t = g.node_time({evt, sub.nodes[static_cast<size_t>(evt)][local]});
            REQUIRE(t.has_value());
            CHECK(*t <= (*cfg.time_cutoffs)[static_cast<size_t>(intro)]);
        }
    }

    TEST_CASE("temporal safety holds across many sampled batches") {
        const auto g = build_graph(dense_ptr());
        const int uid = g.node_type_index("users");
        const int evt = g.node_type_index("events");
        Rng rng(99);
        for (int batch = 0; batch < 50; ++batch) {
            std::vector<NodeId> seeds;
            std::vector<int64_t> cutoffs;
            for (int i = 0; i < 8; ++i) {
                seeds.push_back({uid, static_cast<int>(rng.bounded(150))});
                cutoffs.push_back(static_cast<int64_t>(rng.bounded(30000)));
            }
            NeighborSamplerConfig cfg;
            cfg.fanout = 16;
            cfg.depth = 2;
            cfg.rng_seed = rng.next_u64();
            cfg.time_cutoffs = cutoffs;
            const Subgraph sub = neighbor_sample(g, seeds, cfg);
            for (size_t local = 0; local < sub.nodes[static_cast<size_t>(evt)].size(); ++local) {
                const int intro = sub.intro_seed[static_cast<size_t>(evt)][local];
                const auto t = g.node_time({evt, sub.nodes[static_cast<size_t>(evt)][local]});
                CHECK(*t <= cutoffs[static_cast<size_t>(intro)]);
            }
        }
    }

    TEST_CASE("errors") {
        const auto g = build_graph(dense_ptr());
        NeighborSamplerConfig cfg;
        CHECK_THROWS_AS(neighbor_sample(g, {}, cfg), InvalidSeed);
        CHECK_THROWS_AS(neighbor_sample(g, {{0, 99999}}, cfg), InvalidSeed);
        cfg.time_cutoffs = std::vector<int64_t>{1, 2};
        CHECK_THROWS_AS(neighbor_sample(g, {{0, 0}}, cfg), LengthMismatch);
    }
}

TEST_SUITE("full_subgraph") {
    TEST_CASE("covers the whole graph") {
        const auto g = build_graph(dense_ptr());
        const Subgraph sub = full_subgraph(g);
        CHECK(sub.total_nodes() == g.total_nodes());
        CHECK(sub.total_edges() == g.total_edges());
        check_closure(sub, g);
    }
}
